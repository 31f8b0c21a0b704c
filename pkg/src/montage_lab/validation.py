"""Input validation helpers shared by the estimator classes."""

import numpy as np

from .errors import DimensionMismatch, EmptyInput


def as_float_array(x, name="X"):
    """Coerce to a float64 ndarray, rejecting NaN/inf."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_signal(x, name="signal"):
    """Validate a 1-D sample array."""
    arr = as_float_array(x, name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyInput(f"{name} is empty")
    return arr


def check_feature_matrix(x, dim=None, name="X"):
    """Validate a (n_frames, n_features) matrix, optionally pinning n_features."""
    arr = as_float_array(x, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyInput(f"{name} has no rows")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatch(
            f"{name} has {arr.shape[1]} features, expected {dim}")
    return arr


def check_sequences(x, dim=None, name="X"):
    """Validate a list of (T_i, n_features) matrices or a 3-D array.

    Returns a list of 2-D float64 arrays sharing one feature dimension.
    """
    if isinstance(x, np.ndarray) and x.ndim == 3:
        seqs = [x[i] for i in range(x.shape[0])]
    else:
        seqs = list(x)
    if not seqs:
        raise EmptyInput(f"{name} is empty")
    out = []
    width = dim
    for i, s in enumerate(seqs):
        arr = check_feature_matrix(s, dim=width, name=f"{name}[{i}]")
        width = arr.shape[1]
        out.append(arr)
    return out


def check_is_fitted(estimator, attribute):
    """Raise if the estimator has not been fitted yet."""
    if not hasattr(estimator, attribute):
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first")
