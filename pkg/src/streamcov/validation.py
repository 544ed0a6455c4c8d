"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionError, PreconditionError

MIN_WINDOW = 4


def check_window_array(data, *, min_samples: int = 1, name: str = "window") -> np.ndarray:
    """Return ``data`` as a float64 ``(p, n_g)`` array, rejecting NaN/inf.

    Raises
    ------
    DimensionError
        If the array is not two-dimensional or has too few columns.
    DataError
        If any entry is non-finite.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D (channels x samples), got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} has empty shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    if arr.shape[1] < min_samples:
        raise PreconditionError(
            f"{name} has n_g={arr.shape[1]} samples; at least {min_samples} required"
        )
    return arr


def check_flow_array(data) -> np.ndarray:
    """Validate a ``(q, p, n_g)`` stack of windows."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3:
        raise DimensionError(f"flow array must be 3-D (q, p, n_g), got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise DataError("flow contains non-finite entries")
    return arr


def check_same_channels(*arrays: np.ndarray) -> int:
    ps = {a.shape[0] for a in arrays}
    if len(ps) != 1:
        raise DimensionError(f"channel counts differ: {sorted(ps)}")
    return ps.pop()


def check_flows(flows: Iterable) -> list:
    """Coerce an iterable of flows (``MatrixFlow`` or 3-D arrays) to a list of ``MatrixFlow``."""
    from .matrixflow import MatrixFlow

    out = []
    for f in flows:
        out.append(f if isinstance(f, MatrixFlow) else MatrixFlow.from_array(f))
    return out


def check_probability(value: float, name: str = "tau") -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise PreconditionError(f"{name} must lie strictly between 0 and 1, got {value}")
    return value


def check_nonempty(seq: Sequence, name: str) -> np.ndarray:
    arr = np.asarray(seq, dtype=float).ravel()
    if arr.size == 0:
        raise PreconditionError(f"{name} is empty")
    return arr
