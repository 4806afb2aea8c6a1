"""Small input-validation helpers used at module boundaries."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def as_points_array(points, *, name: str = "points") -> np.ndarray:
    """Coerce to a float64 (N, 3) array of finite coordinates."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"{name}: expected an (N, 3) array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise InputError(f"{name}: empty point set")
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0, 0])
        raise InputError(f"{name}: non-finite coordinate at point {bad}")
    return arr


def check_probabilities(values, *, n: int | None = None, name: str = "probabilities") -> np.ndarray:
    """Coerce to a float64 vector with every entry in [0, 1]."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if n is not None and arr.shape[0] != n:
        raise InputError(f"{name}: expected {n} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InputError(f"{name}: entries must lie in [0, 1]")
    return arr


def check_flags(values, *, n: int | None = None, name: str = "flags") -> np.ndarray:
    """Coerce to a boolean vector, optionally of fixed length."""
    arr = np.asarray(values)
    if arr.dtype != np.bool_:
        if not np.all(np.isin(arr, (0, 1))):
            raise InputError(f"{name}: expected boolean entries")
        arr = arr.astype(bool)
    arr = arr.reshape(-1)
    if n is not None and arr.shape[0] != n:
        raise InputError(f"{name}: expected {n} entries, got {arr.shape[0]}")
    return arr


def check_positive(value: float, *, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise InputError(f"{name}: must be a positive finite number, got {value}")
    return value
