"""Likelihood-ratio baselines for equality of several covariance matrices.

All determinants are handled as log-determinants, so the statistics never
overflow for large windows.  These tests need every sample covariance to be
nonsingular and therefore only apply when ``p < n_g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InapplicableError, PreconditionError, SingularityError
from .matrixflow import MatrixFlow, WindowMatrix
from .validation import check_window_array


@dataclass(frozen=True)
class CovarianceMatrix:
    """Unbiased sample covariance ``Y_g`` with its degrees of freedom ``N_g = n_g - 1``."""

    entries: np.ndarray
    degrees: int

    def __post_init__(self):
        y = np.asarray(self.entries, dtype=float)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise DimensionError(f"covariance must be square, got {y.shape}")
        scale = max(1.0, float(np.max(np.abs(y)))) if y.size else 1.0
        if np.max(np.abs(y - y.T), initial=0.0) > 1e-12 * scale:
            raise PreconditionError("covariance matrix is not symmetric")
        y = 0.5 * (y + y.T)
        if y.size and np.linalg.eigvalsh(y)[0] < -1e-10 * max(np.trace(y), 1e-300):
            raise PreconditionError("covariance matrix is not positive semidefinite")
        y.setflags(write=False)
        object.__setattr__(self, "entries", y)

    @property
    def p(self) -> int:
        return self.entries.shape[0]


def sample_covariance(W) -> CovarianceMatrix:
    """Centered outer-product average with ``1/(n_g - 1)`` scaling."""
    data = W.data if isinstance(W, WindowMatrix) else W
    x = check_window_array(data, min_samples=2)
    xc = x - x.mean(axis=1, keepdims=True)
    n = x.shape[1]
    return CovarianceMatrix(xc @ xc.T / (n - 1), n - 1)


def _logdet(y: np.ndarray, what: str) -> float:
    sign, val = np.linalg.slogdet(y)
    if sign <= 0 or not np.isfinite(val):
        raise SingularityError(f"{what} is singular")
    return float(val)


def _covariances(flow) -> list[CovarianceMatrix]:
    if not isinstance(flow, MatrixFlow):
        flow = MatrixFlow.from_array(flow) if isinstance(flow, np.ndarray) else MatrixFlow(tuple(flow))
    if flow.p >= flow.n_g:
        raise InapplicableError(
            f"likelihood-ratio tests need p < n_g (got p={flow.p}, n_g={flow.n_g})"
        )
    return [sample_covariance(w) for w in flow.windows]


def _pooled(covs) -> tuple[np.ndarray, int]:
    m = sum(c.degrees for c in covs)
    return sum(c.degrees * c.entries for c in covs) / m, m


def lr_stat(flow) -> float:
    """Log of the likelihood ratio ``V2 = prod |Y_g|^(N_g/2) / |Y|^(M/2)``.

    ``Y`` is the pooled covariance ``sum N_g Y_g / M`` with ``M = sum N_g``,
    which makes ``V2 <= 1`` with equality only when all ``Y_g`` coincide.

    Raises
    ------
    InapplicableError
        If ``p >= n_g``.
    SingularityError
        If some ``Y_g`` or the pooled matrix is singular.
    """
    covs = _covariances(flow)
    pooled, m = _pooled(covs)
    terms = [0.5 * c.degrees * _logdet(c.entries, f"Y_{g + 1}") for g, c in enumerate(covs)]
    terms.append(-0.5 * m * _logdet(pooled, "pooled covariance"))
    return math.fsum(terms)


def _lr_factors(covs) -> list[float]:
    """``log V_2h`` for ``h = 2..q``: pooled first ``h-1`` windows against window ``h``."""
    out = []
    acc = covs[0].degrees * covs[0].entries
    n_acc = covs[0].degrees
    ld_acc = _logdet(covs[0].entries, "Y_1")
    for h in range(1, len(covs)):
        c = covs[h]
        ld_h = _logdet(c.entries, f"Y_{h + 1}")
        acc = acc + c.degrees * c.entries
        n_new = n_acc + c.degrees
        ld_new = _logdet(acc / n_new, f"pooled Y_1..Y_{h + 1}")
        out.append(math.fsum([0.5 * n_acc * ld_acc, 0.5 * c.degrees * ld_h, -0.5 * n_new * ld_new]))
        n_acc, ld_acc = n_new, ld_new
    return out


def lr_stat_factored(flow) -> float:
    """``log V2`` accumulated as ``sum_h log V_2h``; equals :func:`lr_stat`."""
    return math.fsum(_lr_factors(_covariances(flow)))


def f_correction(y1: float, y2: float) -> float:
    """Centering term ``f(y1, y2)`` of the corrected LR statistic, for ``0 < y1, y2 < 1``."""
    y1, y2 = float(y1), float(y2)
    if not (0.0 < y1 < 1.0 and 0.0 < y2 < 1.0):
        raise PreconditionError(f"f_correction needs 0 < y1, y2 < 1, got ({y1}, {y2})")
    s = y1 + y2
    u = s - y1 * y2
    t1 = u / (y1 * y2) * math.log(s / u)
    t2 = (y1 * y1 * (1 - y2) * math.log1p(-y2) + y2 * y2 * (1 - y1) * math.log1p(-y1)) / (y1 * y2 * s)
    t3 = -(y1 / s) * math.log(y1 / s) - (y2 / s) * math.log(y2 / s)
    return t1 + t2 + t3


def clr_stat(flow) -> float:
    """Corrected LR statistic ``V3 = sum_h [-(2/(N_1+..+N_{h-1})) log V_2h - p f(y_1h, y_2h)]``.

    ``y_1h = p / (N_1 + .. + N_{h-1})`` and ``y_2h = p / N_h``; both must be
    below 1.
    """
    covs = _covariances(flow)
    p = covs[0].p
    logs = _lr_factors(covs)
    n_acc = covs[0].degrees
    terms = []
    for h in range(1, len(covs)):
        y1, y2 = p / n_acc, p / covs[h].degrees
        if y1 >= 1.0 or y2 >= 1.0:
            raise PreconditionError(f"corrected LR needs p < N; got y1={y1:.4g}, y2={y2:.4g}")
        terms.append(-2.0 / n_acc * logs[h - 1] - p * f_correction(y1, y2))
        n_acc += covs[h].degrees
    return math.fsum(terms)
