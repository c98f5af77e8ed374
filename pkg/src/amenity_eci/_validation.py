"""Small input-checking helpers used by the estimators."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_lonlat(X, *, name="X", allow_empty=False):
    """Return ``X`` as a float64 ``(n, 2)`` array of ``(lon, lat)`` degrees."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=0 if allow_empty else 1, input_name=name)
    if X.shape[1] != 2:
        raise ValueError(f"{name} must have two columns (lon, lat); got {X.shape[1]}")
    if len(X) and (np.any(np.abs(X[:, 1]) > 90.0) or np.any(np.abs(X[:, 0]) > 180.0)):
        raise ValueError(f"{name} contains coordinates outside lon [-180, 180] / lat [-90, 90]")
    return X


def check_ids(ids, n, *, name="store_ids"):
    if ids is None:
        return np.arange(n, dtype=np.int64)
    ids = np.asarray(ids)
    if ids.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},); got {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"{name} must be integers")
    ids = ids.astype(np.int64)
    if len(np.unique(ids)) != n:
        raise ValueError(f"{name} must be unique")
    return ids


def check_positive(name, value, *, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number; got {value!r}")
    if value < 0 or (strict and value == 0):
        raise ValueError(f"{name} must be {'> 0' if strict else '>= 0'}; got {value!r}")
    return float(value)


def check_binary_matrix(M, *, name="M"):
    M = check_array(M, dtype=None, input_name=name)
    if not np.isin(M, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 entries")
    return M.astype(np.int64)


def check_counts_matrix(X, *, name="counts"):
    X = check_array(X, dtype=np.float64, input_name=name)
    if (X < 0).any():
        raise ValueError(f"{name} must be non-negative")
    return X
