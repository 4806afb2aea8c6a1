"""Two-task evaluation: presence confusion/F1, MEDE, MSR, and aggregation.

Presence is judged per landmark from where the decoder put it: a landmark
"predicted in the mesh" scores TP/FP depending on whether it actually
exists; one sent to the null point scores FN/TN. Localization metrics are
computed strictly over true positives so that distances to the artificial
null point never contaminate them. Per-type rows are pooled into a macro
average (unweighted over dentition types) and a micro average (over the
pooled landmark set).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dental import (
    DENTITION_CODES,
    LANDMARKS_PER_TOOTH,
    NUM_LANDMARKS,
    TEETH_PER_ARCH,
    DentalAnnotation,
    landmark_index,
)
from .errors import InputError
from .pointcloud import PointCloud, preprocess
from .validation import as_points_array

__all__ = [
    "ConfusionCounts",
    "confusion",
    "f1",
    "mede",
    "msr",
    "tooth_presence_from_flags",
    "ModelEvaluation",
    "evaluate_model",
    "TypeRow",
    "MetricsReport",
    "aggregate",
    "report_csv",
    "report_text",
    "TimingResult",
    "benchmark_inference",
]

DEFAULT_RADIUS_MM = 1.0


@dataclass(frozen=True)
class ConfusionCounts:
    """Landmark-level presence outcomes. Sums to 80 per evaluated model."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise InputError(f"confusion count {name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _flags(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.shape != (NUM_LANDMARKS,):
        raise InputError(f"{name} must have length {NUM_LANDMARKS}, got shape {arr.shape}")
    return arr.astype(bool)


def confusion(pred_in_mesh, gt_present) -> ConfusionCounts:
    """Count the four per-landmark outcomes over one model's 80 landmarks.

    A landmark that exists but is predicted at the null point counts as a
    false negative; one that does not exist but is predicted in the mesh
    counts as a false positive.
    """
    pred = _flags(pred_in_mesh, "pred_in_mesh")
    gt = _flags(gt_present, "gt_present")
    return ConfusionCounts(
        tp=int(np.sum(pred & gt)),
        fp=int(np.sum(pred & ~gt)),
        fn=int(np.sum(~pred & gt)),
        tn=int(np.sum(~pred & ~gt)),
    )


def f1(c: ConfusionCounts) -> float:
    """2TP / (2TP + FP + FN); the all-TN case scores 1.0 (nothing to find,
    nothing hallucinated)."""
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return 2.0 * c.tp / denom


def _tp_distances(pred_positions, gt_positions, tp_mask) -> np.ndarray:
    pred = as_points_array(pred_positions, name="pred_positions")
    gt = as_points_array(gt_positions, name="gt_positions")
    mask = np.asarray(tp_mask).astype(bool)
    if pred.shape != gt.shape or mask.shape != (pred.shape[0],):
        raise InputError(
            f"mismatched shapes: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}"
        )
    # Index before subtracting so non-TP rows (which may hold placeholder
    # values) never enter the arithmetic.
    return np.linalg.norm(pred[mask] - gt[mask], axis=1)


def mede(pred_positions, gt_positions, tp_mask) -> float | None:
    """Mean Euclidean distance over true positives; None when there are none."""
    d = _tp_distances(pred_positions, gt_positions, tp_mask)
    if d.size == 0:
        return None
    return float(np.mean(d))


def msr(pred_positions, gt_positions, tp_mask, radius: float = DEFAULT_RADIUS_MM) -> float | None:
    """Percentage of true positives within `radius` mm, boundary inclusive."""
    if radius < 0:
        raise InputError(f"radius must be non-negative, got {radius}")
    d = _tp_distances(pred_positions, gt_positions, tp_mask)
    if d.size == 0:
        return None
    return float(100.0 * np.mean(d <= radius))


def tooth_presence_from_flags(in_mesh) -> np.ndarray:
    """Tooth-level presence view: a tooth is predicted present only when all
    five of its landmarks are predicted in the mesh."""
    flags = _flags(in_mesh, "in_mesh")
    return flags.reshape(TEETH_PER_ARCH, LANDMARKS_PER_TOOTH).all(axis=1)


@dataclass(frozen=True)
class ModelEvaluation:
    """One model's confusion counts plus its true-positive distances (mm)."""

    model_id: str
    dentition_type: str
    counts: ConfusionCounts
    tp_distances: np.ndarray

    def __post_init__(self):
        if self.dentition_type not in DENTITION_CODES:
            raise InputError(f"unknown dentition type {self.dentition_type!r}")
        d = np.asarray(self.tp_distances, dtype=np.float64).reshape(-1)
        if d.size != self.counts.tp:
            raise InputError(
                f"{d.size} TP distances for {self.counts.tp} true positives"
            )
        if d.size and (not np.isfinite(d).all() or d.min() < 0):
            raise InputError("TP distances must be finite and non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "tp_distances", d)


def evaluate_model(
    pred_positions, pred_in_mesh, annotation: DentalAnnotation
) -> ModelEvaluation:
    """Score one model's 80 decoded landmarks against its annotation."""
    pred = as_points_array(pred_positions, name="pred_positions")
    if pred.shape != (NUM_LANDMARKS, 3):
        raise InputError(f"pred_positions must be ({NUM_LANDMARKS}, 3), got {pred.shape}")
    in_mesh = _flags(pred_in_mesh, "pred_in_mesh")

    gt_present = np.repeat(np.array(annotation.presence, dtype=bool), LANDMARKS_PER_TOOTH)
    counts = confusion(in_mesh, gt_present)

    tp = in_mesh & gt_present
    gt_pos = np.full((NUM_LANDMARKS, 3), np.nan)
    for t, pts in annotation.landmarks.items():
        for g in range(1, LANDMARKS_PER_TOOTH + 1):
            gt_pos[landmark_index(t, g) - 1] = pts[g - 1]  # k is 1-based
    d = np.linalg.norm(pred[tp] - gt_pos[tp], axis=1)
    return ModelEvaluation(annotation.model_id, annotation.dentition_type, counts, d)


@dataclass(frozen=True)
class TypeRow:
    """Pooled metrics for one dentition type; metric fields are None when
    undefined (no models, or no true positives for MEDE/MSR)."""

    dentition_type: str
    n_models: int
    counts: ConfusionCounts
    f1: float | None
    mede: float | None
    msr: float | None


@dataclass(frozen=True)
class MetricsReport:
    """Per-type rows in code order plus macro and micro aggregates."""

    rows: tuple[TypeRow, ...]
    macro_f1: float | None
    macro_mede: float | None
    macro_msr: float | None
    micro_f1: float | None
    micro_mede: float | None
    micro_msr: float | None
    no_tp_types: tuple[str, ...]
    radius: float
    n_models: int


def _pooled_metrics(counts: ConfusionCounts, distances: np.ndarray, radius: float):
    score = f1(counts)
    if distances.size == 0:
        return score, None, None
    m = float(np.mean(distances))
    s = float(100.0 * np.mean(distances <= radius))
    return score, m, s


def aggregate(evaluations, radius: float = DEFAULT_RADIUS_MM) -> MetricsReport:
    """Pool per-model evaluations into per-type rows and macro/micro averages.

    Macro averages are unweighted over the dentition types that appear in
    the evaluation set; types with no true positives contribute no MEDE/MSR
    term and are listed in `no_tp_types`. Micro averages pool every
    landmark before computing each metric.
    """
    evals = list(evaluations)
    by_type: dict[str, list[ModelEvaluation]] = {code: [] for code in DENTITION_CODES}
    for ev in evals:
        by_type[ev.dentition_type].append(ev)

    rows = []
    no_tp = []
    macro_f1s, macro_medes, macro_msrs = [], [], []
    for code in DENTITION_CODES:
        group = by_type[code]
        if not group:
            rows.append(TypeRow(code, 0, ConfusionCounts(0, 0, 0, 0), None, None, None))
            continue
        counts = ConfusionCounts(0, 0, 0, 0)
        for ev in group:
            counts = counts + ev.counts
        distances = np.concatenate([ev.tp_distances for ev in group])
        score, m, s = _pooled_metrics(counts, distances, radius)
        rows.append(TypeRow(code, len(group), counts, score, m, s))
        macro_f1s.append(score)
        if m is None:
            no_tp.append(code)
        else:
            macro_medes.append(m)
            macro_msrs.append(s)

    if evals:
        pooled_counts = ConfusionCounts(0, 0, 0, 0)
        for ev in evals:
            pooled_counts = pooled_counts + ev.counts
        pooled_d = np.concatenate([ev.tp_distances for ev in evals])
        micro_f1, micro_mede, micro_msr = _pooled_metrics(pooled_counts, pooled_d, radius)
    else:
        micro_f1 = micro_mede = micro_msr = None

    return MetricsReport(
        rows=tuple(rows),
        macro_f1=float(np.mean(macro_f1s)) if macro_f1s else None,
        macro_mede=float(np.mean(macro_medes)) if macro_medes else None,
        macro_msr=float(np.mean(macro_msrs)) if macro_msrs else None,
        micro_f1=micro_f1,
        micro_mede=micro_mede,
        micro_msr=micro_msr,
        no_tp_types=tuple(no_tp),
        radius=float(radius),
        n_models=len(evals),
    )


def _fmt(value, csv: bool, spec: str = "") -> str:
    if value is None:
        return "" if csv else "-"
    if csv:
        return repr(float(value))
    return format(value, spec)


def report_csv(report: MetricsReport) -> str:
    """CSV with one row per dentition type followed by macro/micro rows.

    Undefined metrics serialize as empty fields; floats keep full precision.
    """
    lines = ["dentition_type,models,tp,fp,fn,tn,f1,mede_mm,msr_pct"]
    for row in report.rows:
        c = row.counts
        lines.append(
            f"{row.dentition_type},{row.n_models},{c.tp},{c.fp},{c.fn},{c.tn},"
            f"{_fmt(row.f1, True)},{_fmt(row.mede, True)},{_fmt(row.msr, True)}"
        )
    lines.append(
        f"macro,{report.n_models},,,,,{_fmt(report.macro_f1, True)},"
        f"{_fmt(report.macro_mede, True)},{_fmt(report.macro_msr, True)}"
    )
    pooled = ConfusionCounts(0, 0, 0, 0)
    for row in report.rows:
        pooled = pooled + row.counts
    lines.append(
        f"micro,{report.n_models},{pooled.tp},{pooled.fp},{pooled.fn},{pooled.tn},"
        f"{_fmt(report.micro_f1, True)},{_fmt(report.micro_mede, True)},"
        f"{_fmt(report.micro_msr, True)}"
    )
    return "\n".join(lines) + "\n"


def report_text(report: MetricsReport) -> str:
    """Human-readable table: dentition types 00-14, then Macro-avg/Micro-avg."""
    header = f"{'Dent type':<10}{'Models':>7}{'F1':>8}{'MEDE (mm)':>12}{'MSR (%)':>10}"
    lines = [header, "-" * len(header)]
    for row in report.rows:
        lines.append(
            f"{row.dentition_type:<10}{row.n_models:>7}{_fmt(row.f1, False, '.2f'):>8}"
            f"{_fmt(row.mede, False, '.2f'):>12}{_fmt(row.msr, False, '.1f'):>10}"
        )
    lines.append(
        f"{'Macro-avg':<10}{report.n_models:>7}{_fmt(report.macro_f1, False, '.2f'):>8}"
        f"{_fmt(report.macro_mede, False, '.2f'):>12}{_fmt(report.macro_msr, False, '.1f'):>10}"
    )
    lines.append(
        f"{'Micro-avg':<10}{report.n_models:>7}{_fmt(report.micro_f1, False, '.2f'):>8}"
        f"{_fmt(report.micro_mede, False, '.2f'):>12}{_fmt(report.micro_msr, False, '.1f'):>10}"
    )
    if report.no_tp_types:
        lines.append(f"(no true positives for types: {', '.join(report.no_tp_types)})")
    lines.append(f"(success radius r = {report.radius:g} mm)")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TimingResult:
    """Per-sample inference wall time in seconds over dataset x repetitions."""

    mean: float
    std: float
    n_samples: int
    reps: int

    def format_row(self) -> str:
        return f"inference time: {self.mean:.4f} +/- {self.std:.4f} s over {self.n_samples} samples x {self.reps} reps"


def benchmark_inference(params, clouds, warmup: int = 3, reps: int = 10) -> TimingResult:
    """Time the single-sample pipeline (preprocess, forward, decode).

    Runs `warmup` untimed passes over the first cloud, then `reps` timed
    passes over every cloud; reports the mean and population std of the
    per-sample times. File I/O is the caller's problem and never timed.
    """
    from .network import predict_landmarks

    clouds = list(clouds)
    if not clouds:
        raise InputError("benchmark_inference: empty dataset")
    if reps < 1 or warmup < 0:
        raise InputError(f"benchmark_inference: need reps >= 1 and warmup >= 0, got {reps}, {warmup}")

    n_mesh = params.descriptor.num_points - 1

    def run(pc: PointCloud, seed: int):
        ready = preprocess(pc, n=n_mesh, rng=np.random.default_rng(seed))
        predict_landmarks(ready, params)

    for i in range(warmup):
        run(clouds[0], seed=i)
    times = []
    for rep in range(reps):
        for j, pc in enumerate(clouds):
            t0 = time.perf_counter()
            run(pc, seed=rep * len(clouds) + j)
            times.append(time.perf_counter() - t0)
    arr = np.array(times)
    return TimingResult(float(arr.mean()), float(arr.std()), len(clouds), reps)
