"""Readers and writers for every artifact the pipeline touches.

Point clouds travel as xyz text, ascii PLY, or OBJ vertices; annotations,
predictions, and training configs as JSON; training histories as CSV; model
checkpoints as a little-endian binary blob guarded by a trailing CRC32.

Coordinates are always millimetres. None of the formats carries a unit
field; that is a documented contract, not an omission. Floats in the text
formats are written in shortest round-trip form, so save followed by load
reproduces values bit for bit.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dental import (
    ARCHES,
    LANDMARKS_PER_TOOTH,
    NUM_LANDMARKS,
    TEETH_PER_ARCH,
    DentalAnnotation,
    LandmarkKind,
    classify_dentition,
    landmark_tg,
    tooth_from_label,
    tooth_index,
    tooth_label,
)
from .errors import ChecksumError, FormatError, InputError, VersionError
from .network import ArchDescriptor, ModelParams, init_params
from .pointcloud import PointCloud
from .training import TrainConfig, TrainHistory
from .validation import check_probabilities

__all__ = [
    "POINT_FORMATS",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "PredictionSet",
    "detect_format",
    "load_pointcloud",
    "save_pointcloud",
    "load_annotation",
    "save_annotation",
    "load_prediction",
    "save_prediction",
    "load_checkpoint",
    "save_checkpoint",
    "load_config",
    "save_config",
    "load_history",
    "save_history",
]

POINT_FORMATS = ("xyz", "ply-ascii", "obj")

_SUFFIXES = {".xyz": "xyz", ".ply": "ply-ascii", ".obj": "obj"}

KIND_NAMES = tuple(k.name for k in LandmarkKind)


def _fmt(v: float) -> str:
    # repr of a Python float is the shortest string that parses back to the
    # same bits; never use repr(np.float64), which wraps the value.
    return repr(float(v))


def _read_text(path) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    return p.read_text().splitlines()


def detect_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix not in _SUFFIXES:
        raise InputError(
            f"cannot infer point-cloud format from suffix {suffix!r}; "
            f"pass format= explicitly (one of {POINT_FORMATS})"
        )
    return _SUFFIXES[suffix]


def _parse_row(line: str, lineno: int, path) -> list[float]:
    parts = line.split()
    if len(parts) != 3:
        raise FormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
    try:
        row = [float(v) for v in parts]
    except ValueError:
        raise FormatError(f"{path}:{lineno}: unparseable coordinate in {line!r}") from None
    if not all(np.isfinite(row)):
        raise FormatError(f"{path}:{lineno}: non-finite coordinate in {line!r}")
    return row


def _load_xyz(lines: list[str], path) -> list[list[float]]:
    points = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        points.append(_parse_row(line, lineno, path))
    return points


def _load_ply(lines: list[str], path) -> list[list[float]]:
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}:1: not an ascii PLY file (missing 'ply' magic)")
    elements: list[tuple[str, int]] = []  # (name, count) in declaration order
    vertex_props: list[str] = []
    current = None
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("comment"):
            continue
        if line == "end_header":
            body_start = lineno + 1
            break
        fields = line.split()
        if fields[0] == "format":
            if fields[1:] != ["ascii", "1.0"]:
                raise FormatError(f"{path}:{lineno}: only 'format ascii 1.0' is supported")
        elif fields[0] == "element":
            if len(fields) != 3:
                raise FormatError(f"{path}:{lineno}: malformed element declaration")
            try:
                count = int(fields[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: element count must be an integer") from None
            current = fields[1]
            elements.append((current, count))
        elif fields[0] == "property":
            if current == "vertex":
                vertex_props.append(fields[-1])
        else:
            raise FormatError(f"{path}:{lineno}: unknown header keyword {fields[0]!r}")
    if body_start is None:
        raise FormatError(f"{path}: header never terminated with end_header")
    names = [name for name, _ in elements]
    if "vertex" not in names:
        raise FormatError(f"{path}: header declares no vertex element")
    missing = [axis for axis in ("x", "y", "z") if axis not in vertex_props]
    if missing:
        raise FormatError(f"{path}: vertex element lacks properties {missing}")
    cols = [vertex_props.index(axis) for axis in ("x", "y", "z")]

    points = []
    lineno = body_start
    for name, count in elements:
        for _ in range(count):
            if lineno > len(lines):
                raise FormatError(f"{path}:{lineno}: file ends inside element {name!r}")
            if name == "vertex":
                parts = lines[lineno - 1].split()
                if len(parts) < len(vertex_props):
                    raise FormatError(
                        f"{path}:{lineno}: vertex row has {len(parts)} values, "
                        f"expected {len(vertex_props)}"
                    )
                try:
                    row = [float(parts[c]) for c in cols]
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: unparseable vertex coordinate") from None
                if not all(np.isfinite(row)):
                    raise FormatError(f"{path}:{lineno}: non-finite vertex coordinate")
                points.append(row)
            # rows of every other element (faces, edges) are skipped unread
            lineno += 1
    return points


def _load_obj(lines: list[str], path) -> list[list[float]]:
    points = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] != "v":
            continue  # faces, normals, uvs, groups: vertices only
        if len(fields) not in (4, 5):  # optional w coordinate is ignored
            raise FormatError(f"{path}:{lineno}: malformed vertex line {line!r}")
        try:
            row = [float(v) for v in fields[1:4]]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: unparseable vertex coordinate") from None
        if not all(np.isfinite(row)):
            raise FormatError(f"{path}:{lineno}: non-finite vertex coordinate")
        points.append(row)
    return points


def load_pointcloud(path, format: str | None = None, has_null: bool = False) -> PointCloud:
    """Read vertices in file order; faces and other elements are ignored.

    The null-point flag does not survive serialization, so callers that
    know the file holds a preprocessed cloud pass has_null=True and the
    constructor re-validates the final row.
    """
    fmt = detect_format(path) if format is None else format
    if fmt not in POINT_FORMATS:
        raise InputError(f"unknown point-cloud format {fmt!r}; expected one of {POINT_FORMATS}")
    lines = _read_text(path)
    if fmt == "xyz":
        points = _load_xyz(lines, path)
    elif fmt == "ply-ascii":
        points = _load_ply(lines, path)
    else:
        points = _load_obj(lines, path)
    if not points:
        raise FormatError(f"{path}: no vertices found")
    return PointCloud(np.array(points, dtype=np.float64), has_null=has_null)


def save_pointcloud(path, pc: PointCloud, format: str | None = None) -> None:
    fmt = detect_format(path) if format is None else format
    pts = pc.points
    rows = [" ".join(_fmt(v) for v in p) for p in pts]
    if fmt == "xyz":
        text = "\n".join(rows) + "\n"
    elif fmt == "ply-ascii":
        header = [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(pts)}",
            "property double x",
            "property double y",
            "property double z",
            "end_header",
        ]
        text = "\n".join(header + rows) + "\n"
    elif fmt == "obj":
        text = "\n".join("v " + r for r in rows) + "\n"
    else:
        raise InputError(f"unknown point-cloud format {fmt!r}; expected one of {POINT_FORMATS}")
    Path(path).write_text(text)


# --- annotations -----------------------------------------------------------


def _schema_error(path, json_path: str, message: str) -> FormatError:
    return FormatError(f"{path}: at {json_path}: {message}")


def _require(doc: dict, key: str, kind, path, json_path: str):
    if key not in doc:
        raise _schema_error(path, json_path, f"missing required key {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise _schema_error(
            path, f"{json_path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _parse_xyz_triple(value, path, json_path: str) -> list[float]:
    if not isinstance(value, list) or len(value) != 3:
        raise _schema_error(path, json_path, "expected a [x, y, z] list of 3 numbers")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
            raise _schema_error(path, f"{json_path}[{i}]", "expected a finite number")
        out.append(float(v))
    return out


def save_annotation(path, ann: DentalAnnotation) -> None:
    """All 16 labels of the arch appear as keys; absent teeth carry only
    present=false, landmarks only when present=true."""
    teeth = {}
    for t in range(1, TEETH_PER_ARCH + 1):
        label = tooth_label(t, ann.arch)
        if ann.presence[t - 1]:
            marks = ann.landmarks[t]
            teeth[label] = {
                "present": True,
                "landmarks": {
                    kind: [float(v) for v in marks[g]] for g, kind in enumerate(KIND_NAMES)
                },
            }
        else:
            teeth[label] = {"present": False}
    doc = {
        "model_id": ann.model_id,
        "patient_id": ann.patient_id,
        "arch": ann.arch,
        "dentition_type": ann.dentition_type,
        "teeth": teeth,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_annotation(path) -> DentalAnnotation:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise _schema_error(p, "$", "document must be a JSON object")

    model_id = _require(doc, "model_id", str, p, "$")
    patient_id = _require(doc, "patient_id", str, p, "$")
    arch = _require(doc, "arch", str, p, "$")
    if arch not in ARCHES:
        raise _schema_error(p, "$.arch", f"must be one of {ARCHES}, got {arch!r}")
    dentition_type = _require(doc, "dentition_type", str, p, "$")
    teeth = _require(doc, "teeth", dict, p, "$")

    expected_labels = {tooth_label(t, arch) for t in range(1, TEETH_PER_ARCH + 1)}
    if set(teeth) != expected_labels:
        missing = sorted(expected_labels - set(teeth))
        extra = sorted(set(teeth) - expected_labels)
        raise _schema_error(
            p, "$.teeth", f"must hold the 16 {arch}-arch labels; missing {missing}, extra {extra}"
        )

    presence = [False] * TEETH_PER_ARCH
    landmarks: dict[int, np.ndarray] = {}
    for label, entry in teeth.items():
        jp = f"$.teeth.{label}"
        t = tooth_index(tooth_from_label(label))
        if not isinstance(entry, dict):
            raise _schema_error(p, jp, "tooth entry must be an object")
        if "present" not in entry or not isinstance(entry["present"], bool):
            raise _schema_error(p, jp, "requires a boolean 'present' field")
        if entry["present"]:
            if "landmarks" not in entry or not isinstance(entry["landmarks"], dict):
                raise _schema_error(p, jp, "present tooth requires a 'landmarks' object")
            marks = entry["landmarks"]
            if set(marks) != set(KIND_NAMES):
                raise _schema_error(
                    p, f"{jp}.landmarks", f"must hold exactly the kinds {list(KIND_NAMES)}"
                )
            rows = [
                _parse_xyz_triple(marks[kind], p, f"{jp}.landmarks.{kind}")
                for kind in KIND_NAMES
            ]
            presence[t - 1] = True
            landmarks[t] = np.array(rows)
        elif "landmarks" in entry:
            raise _schema_error(p, jp, "absent tooth must not carry landmarks")

    expected_type = classify_dentition(presence)
    if dentition_type != expected_type:
        raise _schema_error(
            p,
            "$.dentition_type",
            f"{dentition_type!r} contradicts the presence flags: "
            f"classify_dentition gives {expected_type!r}",
        )
    return DentalAnnotation(
        model_id=model_id,
        patient_id=patient_id,
        arch=arch,
        presence=tuple(presence),
        landmarks=landmarks,
        dentition_type=dentition_type,
    )


# --- predictions -----------------------------------------------------------


@dataclass(frozen=True)
class PredictionSet:
    """Decoded model output for one scan: 80 landmark rows plus the 16
    tooth-presence probabilities they were conditioned on."""

    model_id: str
    positions: np.ndarray  # (80, 3)
    in_mesh: np.ndarray  # (80,) bool
    presence: np.ndarray  # (16,) probabilities

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.shape != (NUM_LANDMARKS, 3) or not np.isfinite(pos).all():
            raise InputError(f"prediction positions must be finite (80, 3), got {pos.shape}")
        mesh = np.array(self.in_mesh, dtype=bool)
        if mesh.shape != (NUM_LANDMARKS,):
            raise InputError(f"prediction in_mesh must have shape (80,), got {mesh.shape}")
        prob = check_probabilities(self.presence, n=TEETH_PER_ARCH, name="presence").copy()
        for arr, name in ((pos, "positions"), (mesh, "in_mesh"), (prob, "presence")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def save_prediction(path, pred: PredictionSet) -> None:
    entries = []
    for k in range(1, NUM_LANDMARKS + 1):
        t, g = landmark_tg(k)
        entries.append(
            {
                "tooth": t,
                "kind": KIND_NAMES[g - 1],
                "position": [float(v) for v in pred.positions[k - 1]],
                "in_mesh": bool(pred.in_mesh[k - 1]),
                "presence_prob": float(pred.presence[t - 1]),
            }
        )
    doc = {"model_id": pred.model_id, "landmarks": entries}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_prediction(path) -> PredictionSet:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise _schema_error(p, "$", "document must be a JSON object")
    model_id = _require(doc, "model_id", str, p, "$")
    entries = _require(doc, "landmarks", list, p, "$")
    if len(entries) != NUM_LANDMARKS:
        raise _schema_error(p, "$.landmarks", f"expected 80 entries, got {len(entries)}")

    positions = np.zeros((NUM_LANDMARKS, 3))
    in_mesh = np.zeros(NUM_LANDMARKS, dtype=bool)
    presence = np.full(TEETH_PER_ARCH, -1.0)
    for i, entry in enumerate(entries):
        jp = f"$.landmarks[{i}]"
        if not isinstance(entry, dict):
            raise _schema_error(p, jp, "entry must be an object")
        t, g = landmark_tg(i + 1)
        if entry.get("tooth") != t or entry.get("kind") != KIND_NAMES[g - 1]:
            raise _schema_error(
                p, jp, f"expected tooth {t} kind {KIND_NAMES[g - 1]}, "
                f"got {entry.get('tooth')!r} {entry.get('kind')!r}"
            )
        if not isinstance(entry.get("in_mesh"), bool):
            raise _schema_error(p, f"{jp}.in_mesh", "expected a boolean")
        prob = entry.get("presence_prob")
        if isinstance(prob, bool) or not isinstance(prob, (int, float)) or not 0 <= prob <= 1:
            raise _schema_error(p, f"{jp}.presence_prob", "expected a probability in [0, 1]")
        if presence[t - 1] >= 0 and presence[t - 1] != float(prob):
            raise _schema_error(
                p, f"{jp}.presence_prob", f"tooth {t} carries inconsistent probabilities"
            )
        positions[i] = _parse_xyz_triple(entry.get("position"), p, f"{jp}.position")
        in_mesh[i] = entry["in_mesh"]
        presence[t - 1] = float(prob)
    return PredictionSet(model_id=model_id, positions=positions, in_mesh=in_mesh, presence=presence)


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"CHNETCKP"
CHECKPOINT_VERSION = 1


def _block_arrays(blk) -> list[np.ndarray]:
    out = [blk.w.data, blk.b.data]
    if blk.has_bn:
        out += [blk.gamma.data, blk.beta.data, blk.running.mean, blk.running.var]
    return out


def _param_arrays(params: ModelParams) -> list[np.ndarray]:
    """Serialization order: blocks() order, per block w, b, then batchnorm
    gamma, beta, running mean, running var."""
    return [arr for blk in params.blocks() for arr in _block_arrays(blk)]


def save_checkpoint(path, params: ModelParams) -> None:
    desc = json.dumps(params.descriptor.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<I", len(desc))
    body += desc
    for arr in _param_arrays(params):
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path, descriptor: ArchDescriptor | None = None) -> ModelParams:
    """Bit-exact inverse of save_checkpoint.

    When the caller expects a specific architecture it passes descriptor
    and a mismatch fails before any array is built.
    """
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    blob = p.read_bytes()
    header = len(CHECKPOINT_MAGIC) + 8
    if len(blob) < header + 4:
        raise ChecksumError(f"{p}: truncated checkpoint ({len(blob)} bytes)")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{p}: not a checkpoint file (bad magic)")
    version, desc_len = struct.unpack_from("<II", blob, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"{p}: checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise ChecksumError(f"{p}: checkpoint CRC mismatch")
    try:
        desc_doc = json.loads(blob[header : header + desc_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{p}: unreadable checkpoint descriptor: {exc}") from None
    found = ArchDescriptor.from_dict(desc_doc)
    if descriptor is not None and found != descriptor:
        raise InputError(
            f"{p}: checkpoint architecture {found} does not match the expected {descriptor}"
        )

    # Template with the right shapes; every value is overwritten below.
    params = init_params(found, np.random.default_rng(0))
    offset = header + desc_len
    for arr in _param_arrays(params):
        nbytes = arr.size * 8
        if offset + nbytes > len(blob) - 4:
            raise ChecksumError(f"{p}: checkpoint payload shorter than its descriptor implies")
        arr[...] = np.frombuffer(blob, dtype="<f8", count=arr.size, offset=offset).reshape(
            arr.shape
        )
        offset += nbytes
    if offset != len(blob) - 4:
        raise ChecksumError(f"{p}: {len(blob) - 4 - offset} unexpected trailing bytes")
    return params


# --- configs and histories -------------------------------------------------


def save_config(path, config: TrainConfig) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def load_config(path) -> TrainConfig:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON: {exc}") from None
    return TrainConfig.from_dict(doc)


HISTORY_COLUMNS = ("epoch", "lr", "loss", "mse", "bce", "val_mede", "val_f1")


def save_history(path, history: TrainHistory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history.rows():
            writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def load_history(path) -> TrainHistory:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(HISTORY_COLUMNS):
            raise FormatError(f"{p}: expected header {','.join(HISTORY_COLUMNS)}")
        history = TrainHistory()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(HISTORY_COLUMNS):
                raise FormatError(f"{p}:{lineno}: expected {len(HISTORY_COLUMNS)} columns")
            try:
                history.append_epoch(int(row[0]), *(float(v) for v in row[1:]))
            except ValueError:
                raise FormatError(f"{p}:{lineno}: unparseable numeric value") from None
    return history
