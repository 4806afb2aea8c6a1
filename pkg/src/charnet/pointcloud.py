"""Point-cloud preprocessing: centering, random downsampling, null point.

The null point is an extra vertex placed outside the cloud along +y; a
landmark decoded there marks its tooth as absent. Canonical preprocessing
order is center -> downsample -> append_null, so the null-point formula
always runs in the centered frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .validation import as_points_array

__all__ = [
    "PointCloud",
    "downsample",
    "center",
    "compute_null_point",
    "append_null",
    "preprocess",
]


@dataclass(frozen=True)
class PointCloud:
    """Ordered (N, 3) float64 points in mm; if has_null, the null point is last."""

    points: np.ndarray
    has_null: bool = False

    def __post_init__(self):
        pts = as_points_array(self.points, name="points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.has_null:
            if len(pts) < 2:
                raise InputError("PointCloud: has_null requires at least 2 points")
            expected = compute_null_point(pts[:-1])
            if not np.allclose(pts[-1], expected, atol=1e-9):
                raise InputError(
                    f"PointCloud: last point {pts[-1].tolist()} is not the null point "
                    f"{expected.tolist()} of the preceding points"
                )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def mesh_points(self) -> np.ndarray:
        """All points except the null point (all points if none appended)."""
        return self.points[:-1] if self.has_null else self.points


def downsample(pc: PointCloud, n: int, rng: np.random.Generator) -> PointCloud:
    """Uniform sample of exactly n points, deterministic per rng state.

    Without replacement when the cloud is large enough; otherwise every
    original is kept and the shortfall is drawn with replacement, so the
    output multiset's support is the input.
    """
    if pc.has_null:
        raise InputError("downsample: cloud already carries a null point")
    if n < 1:
        raise InputError(f"downsample: n must be >= 1, got {n}")
    count = len(pc.points)
    if count >= n:
        idx = rng.choice(count, size=n, replace=False)
    else:
        idx = np.concatenate([np.arange(count), rng.choice(count, size=n - count, replace=True)])
    return PointCloud(pc.points[idx])


def center(pc: PointCloud) -> PointCloud:
    """Translate so the centroid is the origin; order preserved."""
    if pc.has_null:
        raise InputError("center: cloud already carries a null point")
    return PointCloud(pc.points - pc.points.mean(axis=0))


def compute_null_point(points) -> np.ndarray:
    """c + (m_b / 2) * (0, 1, 0): centroid pushed +y by half the largest
    bounding-box extent."""
    pts = as_points_array(points, name="points")
    c = pts.mean(axis=0)
    m_b = float((pts.max(axis=0) - pts.min(axis=0)).max())
    return c + np.array([0.0, m_b / 2.0, 0.0])


def append_null(pc: PointCloud) -> PointCloud:
    """Attach the null point as the last vertex."""
    if pc.has_null:
        raise InputError("append_null: cloud already carries a null point")
    extents = pc.points.max(axis=0) - pc.points.min(axis=0)
    if float(extents.max()) == 0.0:
        raise InputError("append_null: zero-extent cloud, null point would coincide with data")
    null = compute_null_point(pc.points)
    return PointCloud(np.vstack([pc.points, null]), has_null=True)


def preprocess(pc: PointCloud, n: int = 10000, rng: np.random.Generator | None = None) -> PointCloud:
    """Canonical chain center -> downsample(n) -> append_null; output has n+1 points."""
    if rng is None:
        rng = np.random.default_rng(0)
    return append_null(downsample(center(pc), n, rng))
