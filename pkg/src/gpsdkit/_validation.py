"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np


def check_signal(x, name="signal", min_length=1):
    """Return ``x`` as a finite 1-D float array.

    Column vectors of shape ``(N, 1)`` are accepted and flattened, so that
    estimators can be called with sklearn-style 2-D ``X``.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.shape[0] < min_length:
        raise ValueError(f"{name} must have at least {min_length} samples")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_scalar(x, name, *, lower=None, upper=None, closed="both", integer=False):
    """Validate a scalar against an interval; returns it as float or int."""
    if integer:
        if not isinstance(x, numbers.Integral) or isinstance(x, bool):
            raise TypeError(f"{name} must be an integer, got {x!r}")
        x = int(x)
    else:
        if not isinstance(x, numbers.Real) or isinstance(x, bool):
            raise TypeError(f"{name} must be a real number, got {x!r}")
        x = float(x)
        if not np.isfinite(x):
            raise ValueError(f"{name} must be finite")
    left = closed in ("both", "left")
    right = closed in ("both", "right")
    if lower is not None and (x < lower or (x == lower and not left)):
        raise ValueError(f"{name}={x} violates lower bound {lower}")
    if upper is not None and (x > upper or (x == upper and not right)):
        raise ValueError(f"{name}={x} violates upper bound {upper}")
    return x


def check_indices(indices, *, discrete):
    """Validate time/index arguments; returns a float array.

    Discrete-time kernels take nonnegative integers, continuous-time kernels
    nonnegative reals.
    """
    from .exceptions import DomainMismatch

    arr = np.asarray(indices)
    if arr.dtype.kind not in "iuf":
        raise DomainMismatch(f"indices must be numeric, got dtype {arr.dtype}")
    farr = arr.astype(float)
    if not np.all(np.isfinite(farr)):
        raise DomainMismatch("indices must be finite")
    if np.any(farr < 0):
        raise DomainMismatch("indices must be nonnegative")
    if discrete and arr.dtype.kind == "f" and np.any(farr != np.round(farr)):
        raise DomainMismatch("discrete-time kernel evaluated at non-integer times")
    return farr
