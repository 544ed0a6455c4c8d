"""Event detection on a stream of flows with a learned baseline.

Training learns the mean ``mu`` and standard deviation ``sigma`` of ``V1``
over normal-operation flows.  A flow is flagged when
``|V1 - mu| >= gamma`` with ``gamma = 3 sigma``.  Unflagged flows are
appended to the history and the baseline is refreshed.  For the first
flagged flow, the most sensitive channel is located by augmenting the two
preceding flows with repeated copies of each candidate channel's event
series.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, DegenerateError, DimensionError, PreconditionError
from .fastcompute import GramMatrix, _cross_weight, c_fast
from .matrixflow import MatrixFlow
from .ustat import _a_from_gram, multi_stat
from .validation import check_flows

SCHEMA_VERSION = 1
MIN_TRAINING_FLOWS = 30


@dataclass(frozen=True)
class DetectorModel:
    """Learned baseline of ``V1`` under normal operation.

    ``history`` holds the ``V1`` values the baseline was computed from, so
    the model can be refreshed as new unflagged flows arrive.
    """

    mu: float
    sigma: float
    gamma: float
    p: int
    n_g: int
    q: int
    window_seconds: float = 1.0
    vst: str = "twoC"
    variant: str = "exact"
    gamma_factor: float = 3.0
    history: tuple = ()

    @property
    def training_flow_count(self) -> int:
        return len(self.history)

    @property
    def degenerate(self) -> bool:
        return not self.sigma > 0

    @property
    def flow_seconds(self) -> float:
        return self.q * self.window_seconds

    def check_flow(self, flow: MatrixFlow) -> None:
        if (flow.p, flow.n_g, flow.q) != (self.p, self.n_g, self.q):
            raise DimensionError(
                f"flow has (p, n_g, q)=({flow.p}, {flow.n_g}, {flow.q}); "
                f"model expects ({self.p}, {self.n_g}, {self.q})"
            )

    def refreshed(self, value: float) -> "DetectorModel":
        """New model with ``value`` appended to the history."""
        return _fit_values(self.history + (float(value),), self)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mu": self.mu,
            "sigma": self.sigma,
            "gamma": self.gamma,
            "gamma_factor": self.gamma_factor,
            "p": self.p,
            "n_g": self.n_g,
            "q": self.q,
            "window_seconds": self.window_seconds,
            "vst": self.vst,
            "variant": self.variant,
            "training_flow_count": self.training_flow_count,
            "history": list(self.history),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        try:
            return cls(
                mu=float(d["mu"]), sigma=float(d["sigma"]), gamma=float(d["gamma"]),
                p=int(d["p"]), n_g=int(d["n_g"]), q=int(d["q"]),
                window_seconds=float(d["window_seconds"]), vst=d["vst"], variant=d["variant"],
                gamma_factor=float(d["gamma_factor"]), history=tuple(float(v) for v in d["history"]),
            )
        except KeyError as exc:
            raise ConfigError(f"model file lacks field {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "DetectorModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EventReport:
    """Outcome of monitoring a stream of flows.

    ``onset_flow_index`` indexes the monitored flows (0-based) and is
    ``None`` when nothing was flagged; ``location`` is a 1-based channel.
    """

    flags: tuple
    magnitude: float | None = None
    duration_s: float = 0.0
    location: int | None = None
    onset_flow_index: int | None = None
    scores: tuple = ()
    statistics: tuple = ()

    @property
    def flagged(self) -> bool:
        return self.onset_flow_index is not None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "onset_flow_index": self.onset_flow_index,
            "magnitude": self.magnitude,
            "duration_s": self.duration_s,
            "location": self.location,
            "flags": [bool(f) for f in self.flags],
            "scores": list(self.scores),
            "statistics": list(self.statistics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _fit_values(values: tuple, template: DetectorModel) -> DetectorModel:
    v = np.asarray(values, dtype=float)
    mu = math.fsum(v) / v.size
    sigma = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return replace(template, mu=mu, sigma=sigma, gamma=template.gamma_factor * sigma, history=tuple(values))


def train(history: Sequence, *, window_seconds: float = 1.0, vst: str = "twoC",
          variant: str = "exact", gamma_factor: float = 3.0,
          min_flows: int = MIN_TRAINING_FLOWS) -> DetectorModel:
    """Learn ``mu``, ``sigma`` and ``gamma = gamma_factor * sigma`` from normal flows.

    A zero ``sigma`` yields a model marked :attr:`DetectorModel.degenerate`,
    which :func:`detect` refuses to use.
    """
    flows = check_flows(history)
    if len(flows) < min_flows:
        raise PreconditionError(f"training needs at least {min_flows} flows, got {len(flows)}")
    configs = {(f.p, f.n_g, f.q) for f in flows}
    if len(configs) != 1:
        raise DimensionError(f"training flows differ in (p, n_g, q): {sorted(configs)}")
    if window_seconds <= 0:
        raise PreconditionError("window_seconds must be positive")
    p, n_g, q = configs.pop()
    values = tuple(multi_stat(f, vst=vst, variant=variant) for f in flows)
    template = DetectorModel(0.0, 0.0, 0.0, p, n_g, q, float(window_seconds), vst, variant,
                             float(gamma_factor))
    return _fit_values(values, template)


def _flag(model: DetectorModel, value: float) -> bool:
    return abs(value - model.mu) >= model.gamma


def detect(model: DetectorModel, flow) -> tuple[bool, float]:
    """Flag a flow when ``|V1 - mu| >= gamma``; return the flag and ``V1``."""
    if model.degenerate:
        raise DegenerateError("model has zero sigma; retrain on non-degenerate history")
    flow = check_flows([flow])[0]
    model.check_flow(flow)
    v = multi_stat(flow, vst=model.vst, variant=model.variant)
    return _flag(model, v), v


def estimate_duration(flags: Sequence[bool], q: int, window_seconds: float) -> float:
    """Total flagged time: ``q * T`` seconds per flagged flow."""
    if window_seconds <= 0:
        raise PreconditionError("window_seconds must be positive")
    return sum(1 for f in flags if f) * q * float(window_seconds)


def numerical_rank(x: np.ndarray, rtol: float = 1e-10) -> int:
    s = np.linalg.svd(np.asarray(x, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _augmented_scores(prev2: MatrixFlow, prev: MatrixFlow, event: MatrixFlow,
                      kappa: int, vst: str) -> np.ndarray:
    w = _cross_weight(vst)
    p, n = event.p, event.n_g
    scores = np.zeros(p)
    for g in range(event.q):
        a = prev2.windows[g].data
        b = prev.windows[g].data
        a = a - a.mean(axis=1, keepdims=True)
        b = b - b.mean(axis=1, keepdims=True)
        c = event.windows[g].data
        c = c - c.mean(axis=1, keepdims=True)
        gaa, gbb, gab = a.T @ a, b.T @ b, a.T @ b
        for l in range(p):
            # kappa identical rows c_l add the rank-one term kappa * c c' to every Gram matrix
            cc = kappa * np.outer(c[l], c[l])
            sa = _a_from_gram(GramMatrix(gaa + cc, True))
            sb = _a_from_gram(GramMatrix(gbb + cc, True))
            scores[l] += sa + sb - w * c_fast(gab + cc)
    return scores / event.q


def localize(prev2, prev, event, *, kappa: int | None = None, vst: str = "twoC",
             rank_tol: float = 1e-10, log=math.log) -> tuple[int, np.ndarray]:
    """Most sensitive channel for an event flow.

    For each channel ``l`` the series ``c_l`` of the event flow is stacked
    ``kappa = ceil(r log p)`` times under both preceding flows (``r`` is the
    numerical rank of ``prev``), and the statistic between the two
    augmented flows is averaged over windows.  The channel whose score has
    the largest magnitude is returned (1-based; ties go to the smaller
    index), together with the raw score vector.

    Notes
    -----
    The duplicated rows are never formed: they contribute ``kappa c c'`` to
    every Gram matrix.  With the two reference flows drawn from the same
    regime, the event channel drives its score strongly negative, so the
    argmax is taken over absolute values.
    """
    prev2, prev, event = check_flows([prev2, prev, event])
    shapes = {(f.p, f.n_g, f.q) for f in (prev2, prev, event)}
    if len(shapes) != 1:
        raise DimensionError(f"localization flows differ in (p, n_g, q): {sorted(shapes)}")
    if kappa is None:
        r = numerical_rank(prev.columns(), rank_tol)
        if r == 0:
            raise DegenerateError("reference flow has rank 0")
        kappa = int(math.ceil(r * log(event.p))) if event.p > 1 else r
    if kappa < 1:
        raise PreconditionError("kappa must be positive")
    scores = _augmented_scores(prev2, prev, event, int(kappa), vst)
    mag = np.abs(scores)
    loc = int(np.flatnonzero(mag == mag.max())[0]) + 1
    return loc, scores


def _first_run(flags: Sequence[bool]) -> tuple[int | None, int]:
    start = next((i for i, f in enumerate(flags) if f), None)
    if start is None:
        return None, 0
    end = start
    while end < len(flags) and flags[end]:
        end += 1
    return start, end - start


def monitor(model: DetectorModel, flows: Sequence, *, context: Sequence = (),
            refresh_every: int = 1, locate: bool = True) -> tuple[EventReport, DetectorModel]:
    """Run the online loop over ``flows``.

    Unflagged flows refresh the model every ``refresh_every`` appended flows
    (0 disables refreshing).  The report covers the first contiguous run of
    flags: its onset, the ``V1`` value at onset, its duration and the
    located channel.  ``context`` supplies earlier normal flows when the
    onset is among the first two monitored flows.
    """
    if model.degenerate:
        raise DegenerateError("model has zero sigma; retrain on non-degenerate history")
    flows = check_flows(flows)
    context = check_flows(context)
    flags, stats = [], []
    pending = []
    current = model
    for flow in flows:
        current.check_flow(flow)
        v = multi_stat(flow, vst=current.vst, variant=current.variant)
        flagged = _flag(current, v)
        flags.append(flagged)
        stats.append(v)
        if not flagged and refresh_every > 0:
            pending.append(v)
            if len(pending) >= refresh_every:
                current = _fit_values(current.history + tuple(pending), current)
                pending = []
    onset, run = _first_run(flags)
    if onset is None:
        return EventReport(tuple(flags), statistics=tuple(stats)), current
    duration = estimate_duration([True] * run, model.q, model.window_seconds)
    location, scores = None, ()
    reference = list(context) + flows[:onset]
    if locate and len(reference) >= 2:
        location, sc = localize(reference[-2], reference[-1], flows[onset], vst=model.vst)
        scores = tuple(float(s) for s in sc)
    report = EventReport(tuple(flags), float(stats[onset]), duration, location, onset, scores,
                         tuple(stats))
    return report, current


class CovarianceEventDetector(BaseEstimator):
    """Estimator interface to :func:`train`, :func:`detect` and :func:`monitor`.

    ``X`` is a sequence of flows.  :meth:`fit` learns the baseline and keeps
    the last two training flows as localization context.

    Parameters
    ----------
    window_seconds : float, default=1.0
        Duration ``T`` of one window.
    gamma_factor : float, default=3.0
    vst : {"twoC", "paper-literal"}, default="twoC"
    variant : {"exact", "principal"}, default="exact"
    min_flows : int, default=30
    refresh_every : int, default=1
    """

    def __init__(self, window_seconds: float = 1.0, gamma_factor: float = 3.0, vst: str = "twoC",
                 variant: str = "exact", min_flows: int = MIN_TRAINING_FLOWS, refresh_every: int = 1):
        self.window_seconds = window_seconds
        self.gamma_factor = gamma_factor
        self.vst = vst
        self.variant = variant
        self.min_flows = min_flows
        self.refresh_every = refresh_every

    def fit(self, X, y=None):
        flows = check_flows(X)
        self.model_ = train(flows, window_seconds=self.window_seconds, vst=self.vst,
                            variant=self.variant, gamma_factor=self.gamma_factor,
                            min_flows=self.min_flows)
        self.context_ = tuple(flows[-2:])
        return self

    def score_samples(self, X) -> np.ndarray:
        """``V1`` of every flow."""
        check_is_fitted(self, "model_")
        flows = check_flows(X)
        for f in flows:
            self.model_.check_flow(f)
        return np.array([multi_stat(f, vst=self.vst, variant=self.variant) for f in flows])

    def decision_function(self, X) -> np.ndarray:
        """``|V1 - mu| - gamma``; nonnegative values are flagged."""
        return np.abs(self.score_samples(X) - self.model_.mu) - self.model_.gamma

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        if self.model_.degenerate:
            raise DegenerateError("model has zero sigma; retrain on non-degenerate history")
        return (self.decision_function(X) >= 0).astype(int)

    def monitor(self, X) -> EventReport:
        """Online loop with refreshing; the fitted model itself is left unchanged."""
        check_is_fitted(self, "model_")
        report, _ = monitor(self.model_, X, context=self.context_, refresh_every=self.refresh_every)
        return report
