"""Gaussian target heatmaps, presence conditioning, and argmax decoding.

A heatmap set is one row per landmark over the columns of a point cloud
whose last column is the null point. Ground-truth rows put a Gaussian bump
around the landmark (absent teeth aim at the null point, making the null
column exactly 1). Conditioning rescales each tooth's rows by its presence
probability p_t on mesh columns and 1-p_t on the null column, so p_t acts
as a soft switch deciding whether the row's argmax can leave the null.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dental import LANDMARKS_PER_TOOTH, NUM_LANDMARKS, DentalAnnotation, landmark_index
from .errors import InputError
from .pointcloud import PointCloud
from .validation import check_probabilities

__all__ = [
    "SIGMA_MM",
    "HeatmapSet",
    "gaussian_heatmaps",
    "gt_heatmaps",
    "char_condition",
    "decode_landmarks",
]

SIGMA_MM = 2.0

_KINDS = ("ground-truth", "raw-prediction", "conditioned")


@dataclass(frozen=True)
class HeatmapSet:
    """K landmark rows by N point columns; the null point is the last column."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InputError(f"HeatmapSet kind must be one of {_KINDS}, got {self.kind!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] % LANDMARKS_PER_TOOTH != 0:
            raise InputError(
                f"HeatmapSet values must be (5*teeth, N), got shape {v.shape}"
            )
        if not np.isfinite(v).all():
            raise InputError("HeatmapSet values must be finite")
        if self.kind == "ground-truth":
            # Gaussian tails underflow to +0.0 for points beyond ~77 mm, so
            # zeros are tolerated; a fully-zero row would mean the landmark
            # is nowhere near its own cloud.
            if v.min() < 0.0 or v.max() > 1.0:
                raise InputError("ground-truth heatmap values must lie in [0, 1]")
            if v.size and not (v.max(axis=1) > 0.0).all():
                raise InputError("every ground-truth heatmap row needs a positive peak")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_landmarks(self) -> int:
        return self.values.shape[0]

    @property
    def num_teeth(self) -> int:
        return self.values.shape[0] // LANDMARKS_PER_TOOTH


def gaussian_heatmaps(points: np.ndarray, targets: np.ndarray, sigma: float = SIGMA_MM) -> np.ndarray:
    """exp(-d(x_i, l_k)^2 / (2 sigma^2)) for every target row k and point i."""
    if sigma <= 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    d2 = ((targets[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def gt_heatmaps(pc: PointCloud, ann: DentalAnnotation, sigma: float = SIGMA_MM) -> HeatmapSet:
    """All 80 ground-truth rows for one cloud; absent teeth target the null point."""
    if not pc.has_null:
        raise InputError("gt_heatmaps: cloud must carry a null point")
    null = pc.points[-1]
    targets = np.empty((NUM_LANDMARKS, 3))
    for t in range(1, 17):
        for g in range(1, 6):
            pos = ann.landmark_position(t, g)
            targets[landmark_index(t, g) - 1] = null if pos is None else pos
    return HeatmapSet(gaussian_heatmaps(pc.points, targets, sigma), "ground-truth")


def char_condition(raw: HeatmapSet, p) -> HeatmapSet:
    """Rescale tooth t's rows by p_t on mesh columns and 1-p_t on the null column."""
    if raw.kind != "raw-prediction":
        raise InputError(f"char_condition: expected raw-prediction heatmaps, got {raw.kind!r}")
    probs = check_probabilities(p, n=raw.num_teeth, name="presence probabilities")
    per_row = np.repeat(probs, LANDMARKS_PER_TOOTH)[:, None]
    out = raw.values * per_row
    out[:, -1] = raw.values[:, -1] * (1.0 - per_row[:, 0])
    return HeatmapSet(out, "conditioned")


def decode_landmarks(h: HeatmapSet, pc: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Argmax decode: each row's position is its highest-valued point.

    Returns (K, 3) positions and K in-mesh flags (false when the argmax is
    the null column). Ties resolve to the lowest point index.
    """
    if not pc.has_null:
        raise InputError("decode_landmarks: cloud must carry a null point")
    if h.values.shape[1] != len(pc):
        raise InputError(
            f"decode_landmarks: {h.values.shape[1]} heatmap columns vs {len(pc)} points"
        )
    best = h.values.argmax(axis=1)
    return pc.points[best].copy(), best != len(pc) - 1
