"""Fast evaluation of the trace U-statistics from cached Gram matrices.

Every kernel in the tr(S^2) and tr(S_s S_t) estimators is a product of
column inner products, so one Gram matrix per window (and one cross-Gram
per window pair) is computed once and reused.  The sums over mutually
distinct index tuples are then reduced to O(n_g^2) work:

* ``sum_{i!=j} G_ij^2``            = ||G0||_F^2
* ``sum* G_ij G_jk``               = sum_j r_j^2 - ||G0||_F^2
* ``sum* G_ij G_kh``               = S^2 - 4 sum_j r_j^2 + 2 ||G0||_F^2

with ``G0`` the Gram matrix without its diagonal, ``r`` its row sums and
``S`` its total.  The literal enumeration over unrepeated index ensembles
(:func:`a_terms_ensemble`, :func:`c_ensemble`) is kept as a quartic
reference path for benchmarking.
"""

from __future__ import annotations

import functools
import itertools
import math
import time
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, PreconditionError
from .validation import MIN_WINDOW, check_window_array

PRINCIPAL_MIN_WINDOW = 20


def _fsum(values: np.ndarray) -> float:
    return math.fsum(values.tolist())


def _tree_sum(values: np.ndarray) -> float:
    # numpy's pairwise summation: fixed reduction tree, O(log n) error growth
    return float(np.add.reduce(values))


def _window_data(w) -> np.ndarray:
    data = getattr(w, "data", w)
    return check_window_array(data)


@dataclass(frozen=True)
class GramMatrix:
    """Column inner products of one window (symmetric) or of a window pair."""

    entries: np.ndarray
    symmetric: bool

    @property
    def shape(self):
        return self.entries.shape


def gram(Ws, Wt=None) -> GramMatrix:
    """Inner products ``z_si' z_sj`` (or ``z_si' z_tj`` when ``Wt`` is given)."""
    xs = _window_data(Ws)
    if Wt is None:
        return GramMatrix(xs.T @ xs, True)
    xt = _window_data(Wt)
    if xs.shape[0] != xt.shape[0]:
        raise DimensionError(f"channel counts differ: {xs.shape[0]} vs {xt.shape[0]}")
    return GramMatrix(xs.T @ xt, False)


def perm_count(n: int, r: int) -> int:
    """Number of ordered r-tuples of distinct indices from n: n!/(n-r)!."""
    return math.perm(n, r)


def unrepeated_ensemble(n_g: int, order: int) -> Iterator[tuple]:
    """Index sets of size ``order`` in decreasing order (i > j > k > h), 0-based."""
    for combo in itertools.combinations(range(n_g - 1, -1, -1), order):
        yield combo


def _entries(G) -> np.ndarray:
    return np.asarray(getattr(G, "entries", G), dtype=float)


def _check_symmetric(G, g: np.ndarray) -> None:
    if isinstance(G, GramMatrix):
        if not G.symmetric:
            raise DimensionError("a cross-window Gram matrix was passed where a same-window one is required")
        return
    scale = max(1.0, float(np.max(np.abs(g))))
    if np.max(np.abs(g - g.T)) > 1e-12 * scale:
        raise DimensionError("same-window Gram matrix must be symmetric")


def a_terms_fast(G, n_g: int | None = None) -> tuple[float, float, float]:
    """The three terms (A1, A2, A3) of the tr(S^2) estimator; estimate is A1 - A2 + A3.

    ``A2`` includes its factor 2, so that ``A1 - A2 + A3`` is the unbiased
    estimate.  Only the off-diagonal Gram entries enter.
    """
    g = _entries(G)
    n = g.shape[0] if n_g is None else int(n_g)
    if g.shape != (n, n):
        raise DimensionError(f"Gram shape {g.shape} does not match n_g={n}")
    if n < MIN_WINDOW:
        raise PreconditionError(f"n_g={n} < {MIN_WINDOW}: the estimator divides by (n_g-3)")
    _check_symmetric(G, g)
    d = np.diagonal(g)
    # off-diagonal quantities without materialising G minus its diagonal
    frob = _tree_sum(np.einsum("ij,ij->i", g, g) - d * d)
    r = g.sum(axis=1) - d
    total = _tree_sum(r)
    r2 = _tree_sum(r * r)
    pairs_sum = frob
    triples_sum = r2 - frob
    quads_sum = math.fsum([total * total, -4.0 * r2, 2.0 * frob])
    a1 = pairs_sum / perm_count(n, 2)
    a2 = 2.0 * triples_sum / perm_count(n, 3)
    a3 = quads_sum / perm_count(n, 4)
    return a1, a2, a3


def c_terms_fast(Gst, n_s: int | None = None, n_t: int | None = None) -> tuple[float, float, float, float]:
    """The four terms of the tr(S_s S_t) estimator; estimate is T1 - T2 - T3 + T4."""
    y = _entries(Gst)
    ns, nt = y.shape
    if n_s is not None and n_s != ns or n_t is not None and n_t != nt:
        raise DimensionError(f"cross-Gram shape {y.shape} does not match ({n_s}, {n_t})")
    if min(ns, nt) < MIN_WINDOW:
        raise PreconditionError(f"window sizes {ns}, {nt}; at least {MIN_WINDOW} required")
    frob = _tree_sum(np.einsum("ij,ij->i", y, y))
    rows = y.sum(axis=1)
    cols = y.sum(axis=0)
    total = _tree_sum(rows)
    rr = _tree_sum(rows * rows)
    cc = _tree_sum(cols * cols)
    t1 = frob / (ns * nt)
    t2 = (cc - frob) / (ns * nt * (ns - 1))
    t3 = (rr - frob) / (ns * nt * (nt - 1))
    t4 = math.fsum([total * total, -rr, -cc, frob]) / (ns * nt * (ns - 1) * (nt - 1))
    return t1, t2, t3, t4


def c_fast(Gst, n_g: int | None = None) -> float:
    """tr(S_s S_t) estimate from a square cross-Gram matrix."""
    y = _entries(Gst)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise DimensionError(f"cross-Gram must be square, got {y.shape}")
    if n_g is not None and y.shape[0] != n_g:
        raise DimensionError(f"cross-Gram side {y.shape[0]} != n_g={n_g}")
    t1, t2, t3, t4 = c_terms_fast(y)
    return math.fsum([t1, -t2, -t3, t4])


def a_terms_ensemble(G) -> tuple[float, float, float]:
    """Reference path: enumerate the unrepeated index ensembles explicitly.

    Each unordered set stands for all of its orderings, so a 3-set carries
    the three "middle index" products and a 4-set the three perfect
    pairings.  Cost is O(n_g^4 / 24).
    """
    g = _entries(G).tolist()
    n = len(g)
    s1 = math.fsum(g[i][j] * g[i][j] for i, j in unrepeated_ensemble(n, 2))
    s2 = math.fsum(
        g[i][j] * g[j][k] + g[j][i] * g[i][k] + g[i][k] * g[k][j]
        for i, j, k in unrepeated_ensemble(n, 3)
    )
    s3 = math.fsum(
        g[i][j] * g[k][h] + g[i][k] * g[j][h] + g[i][h] * g[j][k]
        for i, j, k, h in unrepeated_ensemble(n, 4)
    )
    a1 = 2.0 * s1 / perm_count(n, 2)
    a2 = 2.0 * (2.0 * s2) / perm_count(n, 3)
    a3 = 8.0 * s3 / perm_count(n, 4)
    return a1, a2, a3


def c_ensemble(Y) -> float:
    """Reference path for the cross estimator over unrepeated pairs (quartic)."""
    y = _entries(Y).tolist()
    ns, nt = len(y), len(y[0])
    t1 = math.fsum(v * v for row in y for v in row)
    t2 = 2.0 * math.fsum(
        y[i][j] * y[h][j] for i, h in unrepeated_ensemble(ns, 2) for j in range(nt)
    )
    t3 = 2.0 * math.fsum(
        y[j][i] * y[j][h] for i, h in unrepeated_ensemble(nt, 2) for j in range(ns)
    )
    t4 = 2.0 * math.fsum(
        y[i][j] * y[k][h] + y[i][h] * y[k][j]
        for i, k in unrepeated_ensemble(ns, 2)
        for j, h in unrepeated_ensemble(nt, 2)
    )
    return math.fsum([
        t1 / (ns * nt),
        -t2 / (ns * nt * (ns - 1)),
        -t3 / (ns * nt * (nt - 1)),
        t4 / (ns * nt * (ns - 1) * (nt - 1)),
    ])


def principal_stat(Ws, Wt, *, vst: str = "twoC") -> float:
    """Dominant-term approximation ``A_s1 + A_t1 - 2 C_st,1`` of the pairwise statistic.

    Only the leading term of each estimator is kept, which costs O(n_g^2)
    per pair but is biased.  Requires strictly positive data (voltage
    magnitudes) and ``n_g >= 20``.
    """
    xs, xt = _window_data(Ws), _window_data(Wt)
    if xs.shape[0] != xt.shape[0]:
        raise DimensionError(f"channel counts differ: {xs.shape[0]} vs {xt.shape[0]}")
    for x in (xs, xt):
        if np.any(x <= 0):
            raise PreconditionError("principal_stat requires strictly positive measurements")
        if x.shape[1] < PRINCIPAL_MIN_WINDOW:
            raise PreconditionError(
                f"principal_stat needs n_g >= {PRINCIPAL_MIN_WINDOW}, got {x.shape[1]}"
            )
    a_s1 = leading_terms(xs)
    a_t1 = leading_terms(xt)
    y = xs.T @ xt
    c1 = _fsum(np.sum(y * y, axis=1)) / (xs.shape[1] * xt.shape[1])
    return a_s1 + a_t1 - _cross_weight(vst) * c1


def leading_terms(x) -> float:
    """Leading term A1 of the tr(S^2) estimator for one window."""
    x = _window_data(x)
    g = x.T @ x
    n = g.shape[0]
    return (_fsum(np.sum(g * g, axis=1)) - _fsum(np.diag(g) ** 2)) / perm_count(n, 2)


def _cross_weight(vst: str) -> float:
    if vst == "twoC":
        return 2.0
    if vst == "paper-literal":
        return 1.0
    raise PreconditionError(f"unknown V_st form {vst!r}; use 'twoC' or 'paper-literal'")


@dataclass(frozen=True)
class BenchRow:
    n_g: int
    exact_ns: float
    fast_ns: float


def _fast_pair(xs, xt):
    a_s = a_terms_fast(gram(xs))
    a_t = a_terms_fast(gram(xt))
    c = c_fast(gram(xs, xt))
    return (a_s[0] - a_s[1] + a_s[2]) + (a_t[0] - a_t[1] + a_t[2]) - 2.0 * c


def _literal_pair(xs, xt):
    a_s = a_terms_ensemble(xs.T @ xs)
    a_t = a_terms_ensemble(xt.T @ xt)
    c = c_ensemble(xs.T @ xt)
    return (a_s[0] - a_s[1] + a_s[2]) + (a_t[0] - a_t[1] + a_t[2]) - 2.0 * c


def _batch_size(fn, min_seconds: float) -> int:
    # smallest power of two whose run spans at least min_seconds
    batch = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(batch):
            fn()
        if time.perf_counter_ns() - t0 >= min_seconds * 1e9 or batch >= 1 << 16:
            return batch
        batch *= 2


def _sample_ns(fn, batch: int) -> float:
    t0 = time.perf_counter_ns()
    for _ in range(batch):
        fn()
    return (time.perf_counter_ns() - t0) / batch


def benchmark_scaling(p: int, sizes: Sequence[int], repetitions: int = 5, *, seed: int = 0,
                      literal_max: int = 48, min_seconds: float = 0.02,
                      literal_min_seconds: float = 0.1) -> list[BenchRow]:
    """Median wall-clock time of one pairwise statistic per window size.

    ``exact_ns`` times the literal ensemble enumeration (NaN above
    ``literal_max``); ``fast_ns`` times the Gram-based O(n_g^2) path,
    Gram formation included.  Each timed sample repeats the call until it
    spans ``min_seconds`` (``literal_min_seconds`` for the literal path).
    Samples of all sizes are taken in interleaved rounds so that slow drift
    in machine speed affects every size alike.  Workloads come from a
    seeded RNG.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise PreconditionError("sizes must be ascending")
    jobs = []
    for n in sizes:
        rng = np.random.default_rng([seed, n])
        xs = rng.standard_normal((p, n))
        xt = rng.standard_normal((p, n))
        fast = functools.partial(_fast_pair, xs, xt)
        literal = functools.partial(_literal_pair, xs, xt) if n <= literal_max else None
        jobs.append((fast, _batch_size(fast, min_seconds), literal,
                     _batch_size(literal, literal_min_seconds) if literal else 0))
    fast_s = [[] for _ in sizes]
    exact_s = [[] for _ in sizes]
    for _ in range(repetitions):
        for k, (fast, fb, literal, lb) in enumerate(jobs):
            fast_s[k].append(_sample_ns(fast, fb))
            if literal is not None:
                exact_s[k].append(_sample_ns(literal, lb))
    return [
        BenchRow(n, float(np.median(e)) if e else float("nan"), float(np.median(f)))
        for n, f, e in zip(sizes, fast_s, exact_s)
    ]
