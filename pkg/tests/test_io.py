"""Round-trip identity and malformed-input rejection for every file format."""

import json

import numpy as np
import pytest

from charnet.errors import ChecksumError, FormatError, InputError, VersionError
from charnet.io import (
    CHECKPOINT_MAGIC,
    PredictionSet,
    detect_format,
    load_annotation,
    load_checkpoint,
    load_config,
    load_history,
    load_pointcloud,
    load_prediction,
    save_annotation,
    save_checkpoint,
    save_config,
    save_history,
    save_pointcloud,
    save_prediction,
)
from charnet.network import ArchDescriptor, init_params
from charnet.pointcloud import PointCloud, preprocess
from charnet.synthetic import ArchSpec, generate_arch
from charnet.training import TrainConfig, TrainHistory


def _cloud(rng, n=50):
    return PointCloud(rng.uniform(-30, 30, size=(n, 3)))


# --- point clouds ----------------------------------------------------------


@pytest.mark.parametrize("fmt,suffix", [("xyz", "xyz"), ("ply-ascii", "ply"), ("obj", "obj")])
def test_pointcloud_round_trip(tmp_path, fmt, suffix):
    pc = _cloud(np.random.default_rng(0))
    path = tmp_path / f"cloud.{suffix}"
    save_pointcloud(path, pc)
    back = load_pointcloud(path)
    assert np.array_equal(back.points, pc.points)  # bit-exact via repr floats
    assert not back.has_null


def test_preprocessed_cloud_round_trip(tmp_path):
    pc = preprocess(_cloud(np.random.default_rng(1), 200), n=100)
    path = tmp_path / "cloud.xyz"
    save_pointcloud(path, pc)
    back = load_pointcloud(path, has_null=True)
    assert back.has_null and len(back) == 101
    assert np.array_equal(back.points, pc.points)


def test_detect_format():
    assert detect_format("a/b.XYZ") == "xyz"
    assert detect_format("scan.ply") == "ply-ascii"
    assert detect_format("scan.obj") == "obj"
    with pytest.raises(InputError):
        detect_format("scan.stl")


def test_xyz_parse_errors(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n4 5\n")
    with pytest.raises(FormatError, match=":2:"):
        load_pointcloud(path)
    path.write_text("1 2 3\n# note\n1 2 nan\n")
    with pytest.raises(FormatError, match=":3:.*non-finite"):
        load_pointcloud(path)
    path.write_text("# only a comment\n")
    with pytest.raises(FormatError, match="no vertices"):
        load_pointcloud(path)
    with pytest.raises(InputError, match="no such file"):
        load_pointcloud(tmp_path / "missing.xyz")


def test_ply_vertices_in_order_faces_skipped(tmp_path):
    path = tmp_path / "mesh.ply"
    path.write_text(
        "ply\nformat ascii 1.0\ncomment generated\n"
        "element vertex 3\n"
        "property double x\nproperty double y\nproperty double z\n"
        "element face 2\nproperty list uchar int vertex_indices\n"
        "end_header\n"
        "0 0 0\n1 0 0\n0.5 1 0\n"
        "3 0 1 2\n3 2 1 0\n"
    )
    pc = load_pointcloud(path)
    assert np.array_equal(pc.points, [[0, 0, 0], [1, 0, 0], [0.5, 1, 0]])


def test_ply_extra_vertex_properties(tmp_path):
    path = tmp_path / "mesh.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float nx\nproperty float x\nproperty float y\nproperty float z\n"
        "end_header\n"
        "9 1 2 3\n"
    )
    assert np.array_equal(load_pointcloud(path).points, [[1, 2, 3]])


def test_ply_header_errors(tmp_path):
    path = tmp_path / "mesh.ply"
    path.write_text("solid foo\n")
    with pytest.raises(FormatError, match=":1:"):
        load_pointcloud(path)
    path.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(FormatError, match="ascii"):
        load_pointcloud(path)
    path.write_text("ply\nformat ascii 1.0\nelement face 0\nend_header\n")
    with pytest.raises(FormatError, match="no vertex element"):
        load_pointcloud(path)
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n"
    )
    with pytest.raises(FormatError, match="ends inside element"):
        load_pointcloud(path)


def test_obj_vertices_only(tmp_path):
    path = tmp_path / "mesh.obj"
    path.write_text(
        "# comment\nv 1 2 3\nvn 0 0 1\nv 4 5 6 1.0\nf 1//1 2//1 1//1\ng crown\n"
    )
    assert np.array_equal(load_pointcloud(path).points, [[1, 2, 3], [4, 5, 6]])
    path.write_text("v 1 2\n")
    with pytest.raises(FormatError, match=":1:"):
        load_pointcloud(path)


# --- annotations -----------------------------------------------------------


def _annotation():
    return generate_arch(ArchSpec(seed=7, presence=tuple(t != 4 for t in range(1, 17)))).annotation


def test_annotation_round_trip(tmp_path):
    ann = _annotation()
    path = tmp_path / "ann.json"
    save_annotation(path, ann)
    back = load_annotation(path)
    assert back.model_id == ann.model_id
    assert back.patient_id == ann.patient_id
    assert back.arch == ann.arch
    assert back.dentition_type == ann.dentition_type
    assert back.presence == ann.presence
    assert sorted(back.landmarks) == sorted(ann.landmarks)
    for t in ann.landmarks:
        assert np.array_equal(back.landmarks[t], ann.landmarks[t])


def test_annotation_labels_follow_arch(tmp_path):
    ann = _annotation()
    path = tmp_path / "ann.json"
    save_annotation(path, ann)
    doc = json.loads(path.read_text())
    assert set(doc["teeth"]) == {f"L{s}{p}" for s in "RL" for p in range(1, 9)}
    # tooth index 1 is the patient's right third molar
    assert doc["teeth"]["LR8"]["present"] is True
    assert doc["teeth"]["LR5"]["present"] is False  # tooth 4 maps to right-5


def _mangle(tmp_path, mutate):
    path = tmp_path / "ann.json"
    save_annotation(path, _annotation())
    doc = json.loads(path.read_text())
    mutate(doc)
    path.write_text(json.dumps(doc))
    return path


def test_annotation_schema_errors(tmp_path):
    with pytest.raises(FormatError, match=r"\$\.teeth\.LR8"):
        load_annotation(_mangle(tmp_path, lambda d: d["teeth"]["LR8"].pop("landmarks")))
    with pytest.raises(FormatError, match="absent tooth"):
        load_annotation(
            _mangle(tmp_path, lambda d: d["teeth"]["LR5"].update(landmarks={}))
        )
    with pytest.raises(FormatError, match="classify_dentition"):
        load_annotation(_mangle(tmp_path, lambda d: d.update(dentition_type="00")))
    with pytest.raises(FormatError, match=r"\$\.teeth"):
        load_annotation(_mangle(tmp_path, lambda d: d["teeth"].pop("LL3")))
    with pytest.raises(FormatError, match="missing required key"):
        load_annotation(_mangle(tmp_path, lambda d: d.pop("model_id")))
    with pytest.raises(FormatError, match=r"landmarks\.MP"):
        load_annotation(
            _mangle(tmp_path, lambda d: d["teeth"]["LR8"]["landmarks"].update(MP=[1, 2]))
        )
    with pytest.raises(FormatError, match="kinds"):
        load_annotation(
            _mangle(tmp_path, lambda d: d["teeth"]["LR8"]["landmarks"].pop("LGP"))
        )
    path = tmp_path / "ann.json"
    path.write_text("{not json")
    with pytest.raises(FormatError, match="invalid JSON"):
        load_annotation(path)


def test_annotation_arch_mismatched_labels(tmp_path):
    def to_upper(d):
        d["arch"] = "upper"  # teeth keys still say L*

    with pytest.raises(FormatError, match=r"\$\.teeth"):
        load_annotation(_mangle(tmp_path, to_upper))


# --- predictions -----------------------------------------------------------


def _prediction(rng):
    presence = rng.uniform(size=16)
    return PredictionSet(
        model_id="m-1",
        positions=rng.uniform(-30, 30, size=(80, 3)),
        in_mesh=rng.uniform(size=80) < 0.8,
        presence=presence,
    )


def test_prediction_round_trip(tmp_path):
    pred = _prediction(np.random.default_rng(2))
    path = tmp_path / "pred.json"
    save_prediction(path, pred)
    back = load_prediction(path)
    assert back.model_id == pred.model_id
    assert np.array_equal(back.positions, pred.positions)
    assert np.array_equal(back.in_mesh, pred.in_mesh)
    assert np.array_equal(back.presence, pred.presence)


def test_prediction_file_shape(tmp_path):
    path = tmp_path / "pred.json"
    save_prediction(path, _prediction(np.random.default_rng(3)))
    doc = json.loads(path.read_text())
    assert len(doc["landmarks"]) == 80
    first = doc["landmarks"][0]
    assert first["tooth"] == 1 and first["kind"] == "MP"
    assert doc["landmarks"][79]["tooth"] == 16 and doc["landmarks"][79]["kind"] == "LGP"


def test_prediction_schema_errors(tmp_path):
    path = tmp_path / "pred.json"
    save_prediction(path, _prediction(np.random.default_rng(4)))
    doc = json.loads(path.read_text())

    short = {"model_id": "m", "landmarks": doc["landmarks"][:79]}
    path.write_text(json.dumps(short))
    with pytest.raises(FormatError, match="80 entries"):
        load_prediction(path)

    swapped = json.loads(json.dumps(doc))
    swapped["landmarks"][0], swapped["landmarks"][1] = (
        swapped["landmarks"][1],
        swapped["landmarks"][0],
    )
    path.write_text(json.dumps(swapped))
    with pytest.raises(FormatError, match=r"landmarks\[0\]"):
        load_prediction(path)

    bad = json.loads(json.dumps(doc))
    bad["landmarks"][5]["presence_prob"] = 1.5
    path.write_text(json.dumps(bad))
    with pytest.raises(FormatError, match="presence_prob"):
        load_prediction(path)

    split = json.loads(json.dumps(doc))
    split["landmarks"][1]["presence_prob"] = split["landmarks"][0]["presence_prob"] / 2
    path.write_text(json.dumps(split))
    with pytest.raises(FormatError, match="inconsistent"):
        load_prediction(path)


def test_prediction_set_validation():
    rng = np.random.default_rng(5)
    with pytest.raises(InputError):
        PredictionSet("m", rng.uniform(size=(79, 3)), np.ones(80, bool), np.ones(16) * 0.5)
    with pytest.raises(InputError):
        PredictionSet("m", rng.uniform(size=(80, 3)), np.ones(80, bool), np.ones(16) * 1.5)


# --- checkpoints -----------------------------------------------------------


def _params():
    return init_params(ArchDescriptor.toy(), np.random.default_rng(6))


def _all_arrays(params):
    out = []
    for blk in params.blocks():
        out += [blk.w.data, blk.b.data]
        if blk.has_bn:
            out += [blk.gamma.data, blk.beta.data, blk.running.mean, blk.running.var]
    return out


def test_checkpoint_round_trip(tmp_path):
    params = _params()
    # running stats should survive too, so make them non-trivial
    params.encoder[0].running.mean += 0.25
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    back = load_checkpoint(path)
    assert back.descriptor == params.descriptor
    for a, b in zip(_all_arrays(params), _all_arrays(back)):
        assert a.shape == b.shape
        assert np.array_equal(a, b)


def test_checkpoint_descriptor_guard(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, _params())
    load_checkpoint(path, descriptor=ArchDescriptor.toy())
    with pytest.raises(InputError, match="does not match"):
        load_checkpoint(path, descriptor=ArchDescriptor())


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, _params())
    blob = path.read_bytes()

    path.write_bytes(blob[:-40])
    with pytest.raises(ChecksumError):
        load_checkpoint(path)

    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(ChecksumError, match="CRC"):
        load_checkpoint(path)

    path.write_bytes(blob[:5])
    with pytest.raises(ChecksumError, match="truncated"):
        load_checkpoint(path)

    path.write_bytes(b"GLTF" + blob[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, _params())
    blob = bytearray(path.read_bytes())
    blob[len(CHECKPOINT_MAGIC)] = 9  # version field, little-endian low byte
    import zlib

    body = bytes(blob[:-4])
    path.write_bytes(body + zlib.crc32(body).to_bytes(4, "little"))
    with pytest.raises(VersionError):
        load_checkpoint(path)


# --- configs and histories -------------------------------------------------


def test_config_round_trip(tmp_path):
    config = TrainConfig(epochs=7, lr0=0.01, seed=3, descriptor=ArchDescriptor.toy())
    path = tmp_path / "config.json"
    save_config(path, config)
    assert load_config(path) == config

    path.write_text("{]")
    with pytest.raises(FormatError):
        load_config(path)
    path.write_text(json.dumps({"epochs": 5, "optimizer": "sgd"}))
    with pytest.raises(InputError, match="unknown config keys"):
        load_config(path)


def test_history_round_trip(tmp_path):
    history = TrainHistory()
    history.append_epoch(0, 0.005, 1.25, 1.0, 0.25, float("nan"), float("nan"))
    history.append_epoch(1, 0.004, 0.5, 0.4, 0.1, 2.25, 0.875)
    path = tmp_path / "history.csv"
    save_history(path, history)
    back = load_history(path)
    assert back.epoch == history.epoch
    for field in ("lr", "loss", "mse", "bce", "val_mede", "val_f1"):
        assert np.array_equal(
            getattr(back, field), getattr(history, field), equal_nan=True
        )

    path.write_text("epoch,loss\n")
    with pytest.raises(FormatError, match="header"):
        load_history(path)
