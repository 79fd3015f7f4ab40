"""Input checks shared by the estimator wrappers and the pipeline stages."""
from __future__ import annotations

import numpy as np

from .exceptions import NumericalError

__all__ = ["check_streams", "check_finite", "check_matrix", "check_probability"]


def check_streams(streams):
    from .sensing import StreamSet

    if not isinstance(streams, StreamSet):
        raise TypeError(f"expected a StreamSet, got {type(streams).__name__}")
    if streams.T < 1:
        raise ValueError("stream set holds no time steps")
    return streams


def check_matrix(a, name="array", shape=None, allow_nan=True):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {a.ndim}-D")
    if shape is not None and a.shape != tuple(shape):
        raise ValueError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    if np.isinf(a).any() or (not allow_nan and np.isnan(a).any()):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_finite(value, what="value"):
    """Raise :class:`NumericalError` unless every entry of ``value`` is finite."""
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what} encountered")
    return value


def check_probability(x, name):
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x
