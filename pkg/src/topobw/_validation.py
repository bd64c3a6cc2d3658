"""Input validation helpers shared by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array


def check_points(X, *, dim=None, min_samples=1, name="points"):
    """Return ``X`` as a finite float64 array of shape ``(n, d)``.

    1D input is treated as ``n`` scalar samples.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 1D or 2D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples,
                    ensure_all_finite=True, input_name=name)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} columns, expected {dim}")
    return np.ascontiguousarray(X)


def check_bandwidth(h, name="h"):
    if not isinstance(h, numbers.Real) and not np.isscalar(h):
        raise TypeError(f"{name} must be a real scalar")
    h = float(h)
    if not np.isfinite(h) or h <= 0:
        raise ValueError(f"{name} must be positive and finite, got {h}")
    return h


def check_resolution(resolution, dim):
    """Broadcast a scalar or sequence resolution to a ``dim``-tuple of ints."""
    if np.isscalar(resolution):
        resolution = [resolution] * dim
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) == 1 and dim > 1:
        resolution = resolution * dim
    if len(resolution) != dim:
        raise ValueError(
            f"resolution has {len(resolution)} entries for {dim}-dimensional data")
    if any(r < 2 for r in resolution):
        raise ValueError(f"every resolution entry must be >= 2, got {resolution}")
    return resolution
