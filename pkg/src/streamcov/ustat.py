"""Multi-population covariance-equality test built from trace U-statistics.

For windows ``s`` and ``t`` the pairwise distance estimates
``tr((S_s - S_t)^2) = tr(S_s^2) + tr(S_t^2) - 2 tr(S_s S_t)`` and the flow
statistic ``V1`` averages it over all window pairs.  Both estimators are
exactly invariant to a per-window location shift, so windows are centered
before the Gram matrices are formed; this removes the large common mean of
per-unit voltage data and keeps the fast expansions well conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DegenerateError, DimensionError, PreconditionError
from .fastcompute import _cross_weight, a_terms_fast, c_fast, gram, principal_stat
from .matrixflow import MatrixFlow, WindowMatrix
from .validation import MIN_WINDOW, check_nonempty, check_probability, check_window_array

VARIANCE_METHODS = ("moment", "gaussian", "paper-literal")
VARIANTS = ("exact", "principal")


@dataclass(frozen=True)
class TestResult:
    """Statistic, its standard deviation and the standardized score ``R``."""

    statistic: float
    std_dev: float
    score: float
    pair_count: int
    clamped: bool = False
    variance_method: str = "moment"

    __test__ = False  # keep pytest from collecting this class


def _as_window(w, name: str = "window") -> np.ndarray:
    data = w.data if isinstance(w, WindowMatrix) else w
    return check_window_array(data, min_samples=MIN_WINDOW, name=name)


def _center(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=1, keepdims=True)


def _pair(Ws, Wt) -> tuple[np.ndarray, np.ndarray]:
    xs, xt = _as_window(Ws, "Ws"), _as_window(Wt, "Wt")
    if xs.shape[0] != xt.shape[0]:
        raise DimensionError(f"channel counts differ: {xs.shape[0]} vs {xt.shape[0]}")
    return xs, xt


def _a_from_gram(g) -> float:
    a1, a2, a3 = a_terms_fast(g)
    return math.fsum([a1, -a2, a3])


def tr_sq_estimate(W) -> float:
    """Unbiased estimate of ``tr(Sigma^2)`` from one window.

    Parameters
    ----------
    W : WindowMatrix or array_like of shape (p, n_g)
        Columns are samples; ``n_g >= 4``.

    Returns
    -------
    float
        ``A1 - A2 + A3`` where the sums run over mutually distinct column
        indices.
    """
    x = _center(_as_window(W))
    return _a_from_gram(gram(x))


def tr_cross_estimate(Ws, Wt) -> float:
    """Unbiased estimate of ``tr(Sigma_s Sigma_t)`` from two independent windows."""
    xs, xt = _pair(Ws, Wt)
    return c_fast(_center(xs).T @ _center(xt))


def pairwise_stat(Ws, Wt, *, vst: str = "twoC") -> float:
    """Pairwise distance ``A_s + A_t - 2 C_st``.

    ``vst="paper-literal"`` drops the factor 2 on the cross term, so its
    expectation is not the squared distance between the covariances.

    The cross estimator assumes independent windows.  Passing the same
    window twice does not give zero, because the cross term keeps the
    ``i == j`` products that the same-window estimator excludes.
    """
    w = _cross_weight(vst)
    xs, xt = _pair(Ws, Wt)
    xs, xt = _center(xs), _center(xt)
    return math.fsum([_a_from_gram(gram(xs)), _a_from_gram(gram(xt)), -w * c_fast(xs.T @ xt)])


class _FlowCache:
    """Centered windows, their Gram matrices and per-window ``A`` values."""

    def __init__(self, windows: Sequence[np.ndarray]):
        self.raw = list(windows)
        self.q = len(self.raw)
        self.n = self.raw[0].shape[1]
        self.x = [_center(w) for w in self.raw]
        self.a = [_a_from_gram(gram(x)) for x in self.x]
        self._cross = {}

    def cross(self, s: int, t: int) -> np.ndarray:
        key = (s, t)
        if key not in self._cross:
            self._cross[key] = self.x[s].T @ self.x[t]
        return self._cross[key]

    def pairs(self):
        for s in range(self.q):
            for t in range(s + 1, self.q):
                yield s, t


def _flow_windows(flow) -> list[np.ndarray]:
    if isinstance(flow, MatrixFlow):
        return [w.data for w in flow.windows]
    if isinstance(flow, np.ndarray) and flow.ndim == 3:
        flow = MatrixFlow.from_array(flow)
        return [w.data for w in flow.windows]
    flow = MatrixFlow(tuple(flow))
    return [w.data for w in flow.windows]


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise PreconditionError(f"unknown variant {variant!r}; use one of {VARIANTS}")


def _multi_stat_cached(cache: _FlowCache, vst: str, variant: str) -> float:
    w = _cross_weight(vst)
    terms = []
    for s, t in cache.pairs():
        if variant == "principal":
            terms.append(principal_stat(cache.raw[s], cache.raw[t], vst=vst))
        else:
            terms.append(math.fsum([cache.a[s], cache.a[t], -w * c_fast(cache.cross(s, t))]))
    return math.fsum(terms) / len(terms)


def multi_stat(flow, *, vst: str = "twoC", variant: str = "exact") -> float:
    """Pooled statistic ``V1``: the mean pairwise distance over all window pairs.

    Summing over ordered pairs and dividing by ``q(q-1)`` gives the same
    value because each pairwise term is symmetric.

    Parameters
    ----------
    flow : MatrixFlow, (q, p, n_g) array or sequence of windows
    vst : {"twoC", "paper-literal"}
    variant : {"exact", "principal"}
        ``"principal"`` keeps only the leading term of every estimator.
    """
    _check_variant(variant)
    return _multi_stat_cached(_FlowCache(_flow_windows(flow)), vst, variant)


def _theta_moment(cache: _FlowCache) -> float:
    """Moment estimate of ``Var((x'y)^2) - 2 Var(x' Sigma x)`` for independent x, y.

    Centered columns are rescaled by ``sqrt(n/(n-1))`` so their second
    moments are unbiased.  ``Var(x' Sigma x)`` is estimated from the
    leave-one-out quadratic forms against the pooled second-moment matrix.
    """
    n = cache.n
    scale2 = n / (n - 1.0)
    s1 = s2 = 0.0
    count = 0
    for s, t in cache.pairs():
        a = (scale2 * cache.cross(s, t)) ** 2
        s1 += float(a.sum())
        s2 += float(np.einsum("ij,ij->", a, a))
        count += a.size
    mean_a = s1 / count
    var_a = max(s2 / count - mean_a * mean_a, 0.0)

    X = np.sqrt(scale2) * np.concatenate(cache.x, axis=1)
    p, N = X.shape
    sq = np.einsum("ij,ij->j", X, X)
    if p <= N:
        M = X @ X.T
        quad = np.einsum("ij,ij->j", X, M @ X)
    else:
        G = X.T @ X
        quad = np.einsum("ij,ij->j", G, G)
    b = (quad - sq * sq) / (N - 1)
    return var_a - 2.0 * float(b.var())


def _variance(cache: _FlowCache, method: str) -> tuple[float, bool]:
    q, n = cache.q, cache.n
    if method == "moment":
        theta = _theta_moment(cache)
        if theta > 0:
            return 8.0 * theta / (q * n * (n - 1)) + 8.0 * theta / (q * (q - 1) * n * n), False
        # windows with very different scales can drive the moment estimate negative
        return _variance(cache, "gaussian")[0], True
    if method == "gaussian":
        abar = math.fsum(cache.a) / q
        return 16.0 * abar * abar / ((q - 1) * n * n), False
    if method == "paper-literal":
        total = 0.0
        clamped = False
        for s, t in cache.pairs():
            v = (cache.a[s] + cache.a[t]) / n
            clamped |= v < 0
            total += 2.0 * max(v, 0.0)
        return total / (q * (q - 1)) ** 2, clamped
    raise PreconditionError(f"unknown variance method {method!r}; use one of {VARIANCE_METHODS}")


def pair_variance(Ws, Wt, *, method: str = "moment") -> float:
    """Estimated variance of :func:`pairwise_stat` under equal covariances.

    ``method="moment"`` (default) is the q=2 case of the flow variance used
    by :func:`standardize`.  ``method="paper-literal"`` returns
    ``max(0, (A_s + A_t) / n_g)``, which is not scale-consistent with the
    statistic; ``"gaussian"`` uses ``4 (A_s + A_t)^2 / n_g^2``.
    """
    xs, xt = _pair(Ws, Wt)
    if xs.shape[1] != xt.shape[1]:
        raise DimensionError(f"window sizes differ: {xs.shape[1]} vs {xt.shape[1]}")
    cache = _FlowCache([xs, xt])
    if method == "paper-literal":
        return max(0.0, (cache.a[0] + cache.a[1]) / cache.n)
    if method == "gaussian":
        return 4.0 * (cache.a[0] + cache.a[1]) ** 2 / cache.n ** 2
    return _variance(cache, method)[0]


def standardize(flow, *, variance: str = "moment", vst: str = "twoC",
                variant: str = "exact") -> TestResult:
    """Compute ``V1`` with its standard deviation and the score ``R = V1 / sigma``.

    The null mean is taken as zero.  Under equal covariances
    ``Var(V1) = 8 theta / (q n (n-1)) + 8 theta / (q (q-1) n^2)``, where
    ``theta`` is estimated by moments from the pooled flow (see
    :func:`_theta_moment`).  If that estimate is not positive the Gaussian
    form is used instead and ``clamped`` is set.  The alternatives
    ``"gaussian"`` and ``"paper-literal"`` are kept for comparison.

    Raises
    ------
    DegenerateError
        If the variance estimate is zero while ``V1`` is not.
    """
    _check_variant(variant)
    cache = _FlowCache(_flow_windows(flow))
    stat = _multi_stat_cached(cache, vst, variant)
    var, clamped = _variance(cache, variance)
    sd = math.sqrt(var)
    if sd == 0.0:
        if stat != 0.0:
            raise DegenerateError("zero variance estimate with a nonzero statistic")
        score = 0.0
    else:
        score = stat / sd
    return TestResult(stat, sd, score, cache.q * (cache.q - 1) // 2, clamped, variance)


def gaussian_tail(x: float) -> float:
    """Standard normal upper-tail probability ``Q(x)``."""
    return 0.5 * math.erfc(float(x) / math.sqrt(2.0))


def far_threshold(tau: float) -> float:
    """Threshold ``alpha`` with ``Q(alpha) = tau``, found by bracketed root search."""
    tau = check_probability(tau, "tau")
    return brentq(lambda x: gaussian_tail(x) - tau, -40.0, 40.0, xtol=1e-15, rtol=1e-15, maxiter=500)


def empirical_rates(scores_h0, scores_h1, alpha: float) -> tuple[float, float]:
    """Fraction of null scores strictly above ``alpha`` and alternative scores at or above it."""
    h0 = check_nonempty(scores_h0, "scores_h0")
    h1 = check_nonempty(scores_h1, "scores_h1")
    return float(np.mean(h0 > alpha)), float(np.mean(h1 >= alpha))


class CovarianceFlowTest(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`standardize`.

    ``X`` is a sequence of flows (``MatrixFlow`` objects or ``(q, p, n_g)``
    arrays).  :meth:`transform` returns one row ``(V1, sigma, R)`` per flow
    and :meth:`predict` flags flows whose score exceeds the asymptotic
    threshold at level ``tau``.

    Parameters
    ----------
    tau : float, default=0.05
        Nominal false alarm rate.
    variance : {"moment", "gaussian", "paper-literal"}, default="moment"
    vst : {"twoC", "paper-literal"}, default="twoC"
    variant : {"exact", "principal"}, default="exact"
    """

    def __init__(self, tau: float = 0.05, variance: str = "moment", vst: str = "twoC",
                 variant: str = "exact"):
        self.tau = tau
        self.variance = variance
        self.vst = vst
        self.variant = variant

    def fit(self, X=None, y=None):
        self.alpha_ = far_threshold(self.tau)
        _cross_weight(self.vst)
        _check_variant(self.variant)
        if self.variance not in VARIANCE_METHODS:
            raise PreconditionError(f"unknown variance method {self.variance!r}")
        return self

    def _results(self, X) -> list[TestResult]:
        return [standardize(f, variance=self.variance, vst=self.vst, variant=self.variant) for f in X]

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "alpha_")
        res = self._results(X)
        return np.array([[r.statistic, r.std_dev, r.score] for r in res], dtype=float).reshape(-1, 3)

    def decision_function(self, X) -> np.ndarray:
        return self.transform(X)[:, 2] - self.alpha_

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)
