"""Input validation helpers shared by all estimators and metric functions."""

from __future__ import annotations

import numpy as np


def check_array(a, name: str = "array", ndim: int | None = None, dtype=np.float64) -> np.ndarray:
    """Coerce to a contiguous ndarray of finite values, or raise ValueError."""
    arr = np.asarray(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_matrix(X, name: str = "X") -> np.ndarray:
    X = check_array(X, name=name, ndim=2)
    if X.shape[0] == 0:
        raise ValueError(f"{name} has no rows")
    return X


def check_consistent_length(*arrays) -> int:
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent lengths: {sorted(lengths)}")
    return lengths.pop() if lengths else 0


def check_signed_labels(y, name: str = "y") -> np.ndarray:
    """Validate a +1/-1 label vector."""
    y = check_array(y, name=name, ndim=1)
    values = set(np.unique(y))
    if not values <= {-1.0, 1.0}:
        raise ValueError(f"{name} must contain only +1/-1, got {sorted(values)}")
    return y


def check_binary_indicator(a, name: str = "groups") -> np.ndarray:
    """Validate a 0/1 indicator vector."""
    arr = np.asarray(a)
    arr = check_array(arr, name=name, ndim=1)
    values = set(np.unique(arr))
    if not values <= {0.0, 1.0}:
        raise ValueError(f"{name} must contain only 0/1, got {sorted(values)}")
    return arr.astype(np.int64)


def check_probabilities(p, name: str = "probabilities") -> np.ndarray:
    p = check_array(p, name=name, ndim=1)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return p
