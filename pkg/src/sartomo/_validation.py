"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .simulate import PhaseHistory


def check_points(X, name="X"):
    """Finite float64 array of shape ``(n, 3)`` with ``n >= 1``."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                    input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns, got {X.shape[1]}")
    return X


def check_oriented(X, normals):
    X = check_points(X)
    normals = check_points(normals, "normals")
    if len(normals) != len(X):
        raise ValueError("points and normals differ in length")
    if np.any(np.linalg.norm(normals, axis=1) == 0):
        raise ValueError("normals must be non-zero")
    return X, normals


def check_phase_history(X):
    if not isinstance(X, PhaseHistory):
        raise TypeError(f"expected a PhaseHistory, got {type(X).__name__}")
    if not np.all(np.isfinite(X.samples)):
        raise ValueError("phase history contains non-finite samples")
    return X


def check_bounds(bounds):
    lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in bounds)
    if np.any(hi <= lo):
        raise ValueError("bounds must satisfy lo < hi on every axis")
    return lo, hi
