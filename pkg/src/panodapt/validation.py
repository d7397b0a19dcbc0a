"""Small input-validation helpers shared by the estimators and data types."""

import numpy as np


def as_float_array(x, name, shape=None, finite=True):
    """Coerce to a float64 array, optionally checking shape and finiteness.

    ``shape`` entries set to ``None`` are unconstrained.
    """
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name} must be {len(shape)}-dimensional, got shape {arr.shape}")
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected axis {axis} == {want}")
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_positions(x, name="positions"):
    arr = as_float_array(x, name, shape=(None, 3))
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one point")
    return arr


def as_int_array(x, name, length=None):
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ValueError(f"{name} must be an integer array")
    arr = arr.astype(np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def as_bool_mask(x, n, name="mask"):
    arr = np.asarray(x)
    if arr.dtype != np.bool_:
        raise ValueError(f"{name} must be a boolean array")
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


def check_probability(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive(value, name, strict=True):
    value = float(value)
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise ValueError(
            f"{type(estimator).__name__} is not fitted yet; call fit before using {attribute}"
        )
