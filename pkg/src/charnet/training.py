"""Training loop: losses, patient-disjoint stratified splitting, Adam + cosine.

Each training sample carries a preprocessed cloud (null point last), its
precomputed target heatmaps, and the presence flags. The conditioned model
optimizes lambda_reg * MSE(conditioned heatmaps) + lambda_cls * BCE(presence);
a baseline run optimizes the plain MSE on raw heatmaps and ignores the
presence head. Every random draw is derived from the config seed through
disjoint seed sequences ([seed,0] init, [seed,1,epoch] shuffling,
[seed,2,epoch,batch] dropout, [seed,3] splitting), so runs are bit-for-bit
reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, bce_loss, mse_loss
from .dental import DentalAnnotation, presence_from_annotation
from .errors import InputError, NumericError
from .evaluation import aggregate, evaluate_model
from .heatmaps import SIGMA_MM, HeatmapSet, gt_heatmaps
from .network import (
    ArchDescriptor,
    ModelParams,
    batch_forward,
    init_params,
    predict_landmarks,
)
from .optim import AdamState, adam_step, cosine_lr
from .pointcloud import PointCloud

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "TrainingSample",
    "TrainResult",
    "make_training_sample",
    "mse_heatmap_loss",
    "bce_presence_loss",
    "combined_loss",
    "split_dataset",
    "train",
]

SPLIT_RATIOS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults are the reference training recipe."""

    epochs: int = 100
    batch_size: int = 16
    lr0: float = 0.005
    weight_decay: float = 0.003
    dropout: float = 0.5
    lambda_reg: float = 0.001
    lambda_cls: float = 1.0
    sigma: float = SIGMA_MM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    descriptor: ArchDescriptor = field(default_factory=ArchDescriptor)
    baseline: bool = False
    mse_on_raw: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lambda_reg < 0 or self.lambda_cls < 0:
            raise InputError(
                f"loss weights must be >= 0, got {self.lambda_reg}, {self.lambda_cls}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr0 <= 0 or self.sigma <= 0:
            raise InputError("lr0 and sigma must be positive")
        if self.weight_decay < 0:
            raise InputError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def to_dict(self) -> dict:
        out = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr0": self.lr0,
            "weight_decay": self.weight_decay,
            "dropout": self.dropout,
            "lambda_reg": self.lambda_reg,
            "lambda_cls": self.lambda_cls,
            "sigma": self.sigma,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "descriptor": self.descriptor.to_dict(),
            "baseline": self.baseline,
            "mse_on_raw": self.mse_on_raw,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        if not isinstance(d, dict):
            raise InputError(f"config must be a mapping, got {type(d).__name__}")
        known = dict(d)
        desc = known.pop("descriptor", None)
        fields = {k: known.pop(k) for k in list(known) if k in cls.__dataclass_fields__}
        if known:
            raise InputError(f"unknown config keys: {sorted(known)}")
        if desc is not None:
            fields["descriptor"] = ArchDescriptor.from_dict(desc)
        return cls(**fields)


@dataclass(frozen=True)
class TrainingSample:
    """One model ready for the loop: cloud, targets, presence, annotation."""

    cloud: PointCloud
    annotation: DentalAnnotation
    heatmaps: HeatmapSet

    def __post_init__(self):
        if not self.cloud.has_null:
            raise InputError("training sample cloud must carry a null point")
        if self.heatmaps.values.shape[1] != len(self.cloud):
            raise InputError(
                f"{self.heatmaps.values.shape[1]} heatmap columns for "
                f"{len(self.cloud)} points"
            )

    @property
    def patient_id(self) -> str:
        return self.annotation.patient_id

    @property
    def dentition_type(self) -> str:
        return self.annotation.dentition_type

    @property
    def presence(self) -> np.ndarray:
        return presence_from_annotation(self.annotation).astype(np.float64)


def make_training_sample(
    cloud: PointCloud, annotation: DentalAnnotation, sigma: float = SIGMA_MM
) -> TrainingSample:
    """Pair a preprocessed cloud with its target heatmaps.

    The cloud and annotation must share a coordinate frame: a caller that
    centered the cloud must translate the annotation by the same offset
    first, or the Gaussian targets peak far from every landmark.
    """
    return TrainingSample(cloud, annotation, gt_heatmaps(cloud, annotation, sigma))


def mse_heatmap_loss(gt: HeatmapSet, pred: HeatmapSet) -> float:
    """(1/K) sum_k (1/N) sum_i (h_ki - hhat_ki)^2, i.e. the overall mean."""
    if gt.values.shape != pred.values.shape:
        raise InputError(
            f"heatmap shape mismatch: {gt.values.shape} vs {pred.values.shape}"
        )
    diff = gt.values - pred.values
    return float(np.mean(diff * diff))


def bce_presence_loss(y, y_hat, clamp: float = 1e-7) -> float:
    """Mean binary cross-entropy with probabilities clamped to [clamp, 1-clamp]."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise InputError(f"presence shape mismatch: {y.shape} vs {p.shape}")
    p = np.clip(p, clamp, 1.0 - clamp)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def combined_loss(mse: float, bce: float, lambda_reg: float, lambda_cls: float) -> float:
    return lambda_reg * mse + lambda_cls * bce


@dataclass
class TrainHistory:
    """Per-epoch log; every list has one entry per completed epoch."""

    epoch: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    bce: list[float] = field(default_factory=list)
    val_mede: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)

    def append_epoch(self, epoch, lr, loss, mse, bce, val_mede, val_f1) -> None:
        self.epoch.append(int(epoch))
        self.lr.append(float(lr))
        self.loss.append(float(loss))
        self.mse.append(float(mse))
        self.bce.append(float(bce))
        self.val_mede.append(float(val_mede))
        self.val_f1.append(float(val_f1))

    def __len__(self) -> int:
        return len(self.epoch)

    def rows(self) -> list[tuple]:
        return list(
            zip(self.epoch, self.lr, self.loss, self.mse, self.bce, self.val_mede, self.val_f1)
        )


@dataclass
class TrainResult:
    """Final parameters plus the log; with a validation split, also the
    best-by-validation-MEDE snapshot."""

    params: ModelParams
    history: TrainHistory
    best_params: ModelParams | None = None
    best_epoch: int | None = None


def _check_ratios(ratios) -> tuple[float, float, float]:
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x <= 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
        raise InputError(f"split ratios must be 3 positive numbers summing to 1, got {ratios}")
    return r


def split_dataset(samples, seed: int = 0, ratios=SPLIT_RATIOS):
    """Patient-disjoint stratified split into (train, val, test).

    Patients are the unit of assignment: all of a patient's samples travel
    together, and a patient's stratum is the dentition type of its first
    sample. Within each stratum the integer subset sizes come from
    largest-remainder rounding, with ties broken toward the subset that is
    furthest below its global target so small strata cannot all dump their
    leftover into the same subset.
    """
    ratios = _check_ratios(ratios)
    samples = list(samples)
    by_patient: dict[str, list] = {}
    for s in samples:
        by_patient.setdefault(s.patient_id, []).append(s)
    if len(by_patient) < 3:
        raise InputError(
            f"need at least 3 patients to form three subsets, got {len(by_patient)}"
        )

    strata: dict[str, list[str]] = {}
    for pid in sorted(by_patient):
        strata.setdefault(by_patient[pid][0].dentition_type, []).append(pid)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    out = ([], [], [])
    ideal_total = [0.0, 0.0, 0.0]
    assigned = [0, 0, 0]
    for code in sorted(strata):
        patients = list(strata[code])
        patients = [patients[i] for i in rng.permutation(len(patients))]
        n = len(patients)
        ideal = [n * r for r in ratios]
        take = [math.floor(x) for x in ideal]
        for i in range(3):
            ideal_total[i] += ideal[i]
        for _ in range(n - sum(take)):
            pick = max(
                range(3),
                key=lambda i: (ideal[i] - take[i], ideal_total[i] - assigned[i] - take[i], -i),
            )
            take[pick] += 1
        cut1, cut2 = take[0], take[0] + take[1]
        groups = (patients[:cut1], patients[cut1:cut2], patients[cut2:])
        for i in range(3):
            assigned[i] += take[i]
            for pid in groups[i]:
                out[i].extend(by_patient[pid])
    return out


def _stacked_arrays(samples, descriptor: ArchDescriptor):
    n_pts = descriptor.num_points
    k = descriptor.num_landmarks
    pts, targets, flags = [], [], []
    for idx, s in enumerate(samples):
        if len(s.cloud) != n_pts:
            raise InputError(
                f"sample {idx}: {len(s.cloud)} points, descriptor expects {n_pts}"
            )
        if s.heatmaps.num_landmarks != k:
            raise InputError(
                f"sample {idx}: {s.heatmaps.num_landmarks} heatmap rows, "
                f"descriptor expects {k}"
            )
        pts.append(s.cloud.points)
        targets.append(s.heatmaps.values.T)  # (N, K) to match the forward layout
        flags.append(s.presence)
    return np.array(pts), np.array(targets), np.array(flags)


def _batch_loss(params, pts, targets, flags, config: TrainConfig, rng):
    """Forward in train mode and assemble the optimized loss Tensor."""
    raw, p, cond = batch_forward(
        pts, params, "train", rng, config.dropout, condition=not config.baseline
    )
    pred = raw if (config.baseline or config.mse_on_raw) else cond
    mse_t = mse_loss(pred, targets)
    if config.baseline:
        return mse_t, float(mse_t.data), bce_presence_loss(flags, p.data)
    bce_t = bce_loss(p, flags)
    loss = mse_t.scale(config.lambda_reg) + bce_t.scale(config.lambda_cls)
    return loss, float(mse_t.data), float(bce_t.data)


def _validation_metrics(params, val_samples, condition: bool):
    evals = []
    for s in val_samples:
        positions, in_mesh, _ = predict_landmarks(s.cloud, params, condition=condition)
        evals.append(evaluate_model(positions, in_mesh, s.annotation))
    report = aggregate(evals)
    mede = report.micro_mede if report.micro_mede is not None else math.nan
    score = report.micro_f1 if report.micro_f1 is not None else math.nan
    return mede, score


def train(
    train_samples,
    config: TrainConfig,
    val_samples=None,
    initial_params: ModelParams | None = None,
) -> TrainResult:
    """Run the full loop and return final params, history, and (with a
    validation set) the snapshot with the lowest validation micro MEDE.

    Aborts with a diagnostic naming the epoch and batch if the loss ever
    goes non-finite.
    """
    train_samples = list(train_samples)
    if not train_samples:
        raise InputError("train: empty training set")
    pts, targets, flags = _stacked_arrays(train_samples, config.descriptor)
    n = len(train_samples)

    if initial_params is None:
        params = init_params(config.descriptor, np.random.default_rng(np.random.SeedSequence([config.seed, 0])))
    else:
        if initial_params.descriptor != config.descriptor:
            raise InputError("initial_params descriptor does not match config")
        params = initial_params.copy()
    state = AdamState.initial(params.parameters())
    history = TrainHistory()
    best_params = None
    best_epoch = None
    best_mede = math.inf

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0)
        order = np.random.default_rng(np.random.SeedSequence([config.seed, 1, epoch])).permutation(n)
        loss_sum = mse_sum = bce_sum = 0.0
        for b in range(0, n, config.batch_size):
            batch = order[b : b + config.batch_size]
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, 2, epoch, b // config.batch_size])
            )
            loss, mse_val, bce_val = _batch_loss(
                params, pts[batch], targets[batch], flags[batch], config, rng
            )
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {b // config.batch_size}"
                )
            for t in params.parameters():
                t.zero_grad()
            loss.backward()
            adam_step(
                params.parameters(),
                state,
                lr,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.eps,
                weight_decay=config.weight_decay,
            )
            w = len(batch)
            loss_sum += float(loss.data) * w
            mse_sum += mse_val * w
            bce_sum += bce_val * w

        if val_samples:
            val_mede, val_f1 = _validation_metrics(params, val_samples, condition=not config.baseline)
            if val_mede < best_mede:  # NaN never wins
                best_mede = val_mede
                best_params = params.copy()
                best_epoch = epoch
        else:
            val_mede = val_f1 = math.nan
        history.append_epoch(
            epoch, lr, loss_sum / n, mse_sum / n, bce_sum / n, val_mede, val_f1
        )

    return TrainResult(params, history, best_params, best_epoch)
