"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidArgumentError


def check_rng(random_state=None):
    """Turn ``None``, an int seed or a Generator into a ``np.random.Generator``."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (numbers.Integral, np.integer)):
        return np.random.default_rng(random_state)
    if isinstance(random_state, np.random.SeedSequence):
        return np.random.default_rng(random_state)
    raise InvalidArgumentError(f"cannot build a random generator from {random_state!r}")


def check_matrix(A, name="matrix", shape=None, square=False):
    try:
        A = check_array(A, dtype=float, ensure_2d=True, ensure_min_samples=1)
    except ValueError as err:
        raise InvalidArgumentError(f"{name}: {err}") from None
    if square and A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got {A.shape}")
    if shape is not None and A.shape != tuple(shape):
        raise InvalidArgumentError(f"{name} must have shape {tuple(shape)}, got {A.shape}")
    return A


def check_vector(v, name="vector", size=None):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        v = v.ravel()
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    if size is not None and v.size != size:
        raise InvalidArgumentError(f"{name} must have length {size}, got {v.size}")
    return v


def check_same_shape(A, B, names=("Y", "M")):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise InvalidArgumentError(f"{names[0]} has shape {A.shape} but {names[1]} has {B.shape}")
    return A, B


def check_positive(x, name):
    if not (np.isfinite(x) and x > 0):
        raise InvalidArgumentError(f"{name} must be positive, got {x}")
    return float(x)
