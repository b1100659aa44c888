"""Small input-validation helpers shared by the estimators and functions."""

import numbers

import numpy as np


def check_points(X, dim=None, name="X", allow_empty=False):
    """Return ``X`` as a C-contiguous float64 array of shape (n, d).

    Raises ``ValueError`` on wrong rank, wrong dimension or non-finite values.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 and dim is not None and X.shape[0] == dim:
        X = X.reshape(1, dim)
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2D array of shape (n, d), got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has dimension {X.shape[1]}, expected {dim}")
    if X.shape[1] not in (2, 3):
        raise ValueError(f"{name} must be 2D or 3D points, got dimension {X.shape[1]}")
    if not allow_empty and X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(X)


def check_query(x, dim, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ValueError(f"{name} must have shape ({dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_box(lo, hi, dim=None):
    """Validate an axis-aligned box given by its two corners."""
    lo = np.asarray(lo, dtype=np.float64).ravel()
    hi = np.asarray(hi, dtype=np.float64).ravel()
    if lo.shape != hi.shape or lo.shape[0] not in (2, 3):
        raise ValueError("box corners must be two 2- or 3-vectors of equal size")
    if dim is not None and lo.shape[0] != dim:
        raise ValueError(f"box has dimension {lo.shape[0]}, expected {dim}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("box corners must be finite")
    if np.any(hi <= lo):
        raise ValueError(f"degenerate box: lo={lo.tolist()} hi={hi.tolist()}")
    return lo, hi
