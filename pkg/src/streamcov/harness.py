"""Experiment driver: Monte Carlo rate tables, q-sweeps, scenario runs and reports.

Every replicate draws from its own child seed
``SeedSequence(seed, spawn_key=(cell, hypothesis, replicate))`` so results do
not depend on execution order or worker count, and the null replicates are
unaffected by the strength of the alternative.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .classical import clr_stat, lr_stat
from .detector import SCHEMA_VERSION, DetectorModel, EventReport, monitor, train
from .errors import ConfigError, PreconditionError
from .fastcompute import BenchRow
from .matrixflow import MatrixFlow, StreamCursor, format_float, ingest_samples, load_csv
from .simgen import CASE_SIZES, ScenarioConfig, gen_noise, load_profile, load_scenario_config, make_scenario
from .ustat import far_threshold, standardize

METHODS = ("proposed", "LR", "CLR")
H0, H1, CALIBRATION = 0, 1, 2
RATE_HEADER = ("p", "n_g", "q", "method", "DR", "FAR", "replicates", "seed")


@dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo design for DR/FAR estimation.

    The alternative scales the centered noise of some windows by
    ``sqrt(h1_factor)``: the last window (``h1_windows="one"``) or the last
    ``q // 2`` windows (``"half"``).
    """

    grid: tuple = ((30, 100, 10),)
    noise: str = "GSN"
    replicates: int = 200
    tau: float = 0.05
    methods: tuple = ("proposed",)
    seed: int = 0
    h1_factor: float = 2.0
    h1_windows: str = "one"
    case: str = "auto"
    variance: str = "moment"
    vst: str = "twoC"
    variant: str = "exact"
    n_jobs: int = 1

    def __post_init__(self):
        grid = tuple(tuple(int(v) for v in cell) for cell in self.grid)
        for cell in grid:
            if len(cell) != 3:
                raise ConfigError(f"grid cells are (p, n_g, q), got {cell}")
            p, n_g, q = cell
            if p < 1 or n_g < 4 or q < 2:
                raise ConfigError(f"invalid cell {cell}: need p >= 1, n_g >= 4, q >= 2")
        object.__setattr__(self, "grid", grid)
        if self.replicates < 100:
            raise ConfigError(f"rate estimates need at least 100 replicates, got {self.replicates}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        methods = tuple(self.methods)
        unknown = set(methods) - set(METHODS)
        if unknown or not methods:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        object.__setattr__(self, "methods", methods)
        if self.noise.upper() not in ("GSN", "GMN"):
            raise ConfigError(f"unknown noise {self.noise!r}")
        object.__setattr__(self, "noise", self.noise.upper())
        if self.h1_windows not in ("one", "half"):
            raise ConfigError("h1_windows must be 'one' or 'half'")
        if self.h1_factor <= 0:
            raise ConfigError("h1_factor must be positive")


@dataclass(frozen=True)
class RateRow:
    p: int
    n_g: int
    q: int
    method: str
    DR: float | None
    FAR: float | None
    replicates: int
    seed: int

    @property
    def applicable(self) -> bool:
        return self.DR is not None


@dataclass
class RateTable:
    """Rows of ``(p, n_g, q, method, DR, FAR, replicates, seed)``; ``None`` marks inapplicable cells."""

    rows: list = field(default_factory=list)

    def get(self, p: int, n_g: int, q: int, method: str) -> RateRow:
        for r in self.rows:
            if (r.p, r.n_g, r.q, r.method) == (p, n_g, q, method):
                return r
        raise KeyError((p, n_g, q, method))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RATE_HEADER)
        for r in self.rows:
            rate = (lambda v: "-" if v is None else repr(float(v)))
            w.writerow([r.p, r.n_g, r.q, r.method, rate(r.DR), rate(r.FAR), r.replicates, r.seed])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "rows": [
                {k: getattr(r, k) for k in RATE_HEADER} for r in self.rows
            ],
        }


def _profile_for(case: str, p: int):
    if case == "auto":
        case = next((c for c, size in CASE_SIZES.items() if size == p), "flat")
    return load_profile(case, p if case == "flat" else None)


def child_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def draw_flow(profile, n_g: int, q: int, noise: str, rng: np.random.Generator,
              factor: float = 1.0, windows: str = "one") -> MatrixFlow:
    """One flow of noise around ``z0``; with ``factor != 1`` some windows get scaled noise."""
    z0 = profile.z0[:, None]
    cols = gen_noise(profile, q * n_g, noise, rng)
    arr = np.stack(np.split(cols, q, axis=1))
    if factor != 1.0:
        k = 1 if windows == "one" else q // 2
        arr[q - k:] = z0 + math.sqrt(factor) * (arr[q - k:] - z0)
    return MatrixFlow.from_array(arr)


def _scores(flow: MatrixFlow, methods, cfg: ExperimentConfig) -> dict:
    out = {}
    for m in methods:
        if m == "proposed":
            out[m] = standardize(flow, variance=cfg.variance, vst=cfg.vst, variant=cfg.variant).score
        elif m == "LR":
            out[m] = -lr_stat(flow)
        else:
            out[m] = clr_stat(flow)
    return out


def lr_applicable(p: int, n_g: int) -> bool:
    return p < n_g


def clr_applicable(p: int, n_g: int) -> bool:
    return p < n_g - 1


def _replicate(cfg: ExperimentConfig, cell_index: int, cell, hyp: int, rep: int, methods) -> dict:
    p, n_g, q = cell
    rng = child_rng(cfg.seed, cell_index, hyp, rep)
    factor = cfg.h1_factor if hyp == H1 else 1.0
    flow = draw_flow(_profile_for(cfg.case, p), n_g, q, cfg.noise, rng, factor, cfg.h1_windows)
    return _scores(flow, methods, cfg)


def _batch(cfg, cell_index, cell, hyp, methods) -> dict:
    if cfg.n_jobs == 1:
        res = [_replicate(cfg, cell_index, cell, hyp, r, methods) for r in range(cfg.replicates)]
    else:
        res = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_replicate)(cfg, cell_index, cell, hyp, r, methods) for r in range(cfg.replicates)
        )
    return {m: np.array([r[m] for r in res]) for m in methods}


def run_cell(cfg: ExperimentConfig, cell_index: int, cell) -> list[RateRow]:
    p, n_g, q = cell
    usable = []
    for m in cfg.methods:
        if m == "LR" and not lr_applicable(p, n_g) or m == "CLR" and not clr_applicable(p, n_g):
            continue
        usable.append(m)
    rows = {}
    if usable:
        h0 = _batch(cfg, cell_index, cell, H0, usable)
        h1 = _batch(cfg, cell_index, cell, H1, usable)
        classical = [m for m in usable if m != "proposed"]
        cal = _batch(cfg, cell_index, cell, CALIBRATION, classical) if classical else {}
        for m in usable:
            thr = far_threshold(cfg.tau) if m == "proposed" else float(np.quantile(cal[m], 1 - cfg.tau))
            rows[m] = (float(np.mean(h1[m] >= thr)), float(np.mean(h0[m] > thr)))
    out = []
    for m in cfg.methods:
        dr, far = rows.get(m, (None, None))
        out.append(RateRow(p, n_g, q, m, dr, far, cfg.replicates, cfg.seed))
    return out


def run_power_table(config: ExperimentConfig) -> RateTable:
    """DR and FAR per grid cell and method.

    The proposed test uses the asymptotic threshold ``Q^{-1}(tau)``.  LR and
    CLR use the ``1 - tau`` quantile of a separate null calibration batch.
    LR is inapplicable when ``p >= n_g`` and CLR when ``p >= n_g - 1``;
    such cells carry ``None`` rates.
    """
    table = RateTable()
    for i, cell in enumerate(config.grid):
        table.rows.extend(run_cell(config, i, cell))
    return table


@dataclass(frozen=True)
class SweepPoint:
    q: int
    n_g: int
    DR: float
    FAR: float


def sweep_q(total_budget: int, mode: str, config: ExperimentConfig,
            qs: Sequence[int] | None = None) -> list[SweepPoint]:
    """Detection rate of the proposed test as a function of ``q``.

    ``mode="fixed_total"`` splits ``total_budget`` samples into ``q`` windows
    of ``total_budget // q``; ``mode="fixed_window"`` uses ``total_budget``
    as the window size for every ``q``.  ``p`` comes from the first grid
    cell of ``config``.
    """
    if mode not in ("fixed_total", "fixed_window"):
        raise ConfigError(f"mode must be 'fixed_total' or 'fixed_window', got {mode!r}")
    p = config.grid[0][0]
    if qs is None:
        if mode == "fixed_total":
            qs = [q for q in range(2, total_budget // 4 + 1) if total_budget % q == 0]
        else:
            qs = list(range(2, 11))
    points = []
    for q in qs:
        if q < 2:
            raise ConfigError(f"q must be at least 2, got {q}")
        if mode == "fixed_total":
            if total_budget % q:
                raise ConfigError(f"budget {total_budget} is not divisible by q={q}")
            n_g = total_budget // q
        else:
            n_g = total_budget
        if n_g < 4:
            raise ConfigError(f"q={q} leaves windows of {n_g} < 4 samples")
        cell_cfg = ExperimentConfig(**{**config.__dict__, "grid": ((p, n_g, q),), "methods": ("proposed",)})
        row = run_cell(cell_cfg, q, (p, n_g, q))[0]
        points.append(SweepPoint(q, n_g, row.DR, row.FAR))
    return points


def sweep_csv(points: Sequence[SweepPoint], config: ExperimentConfig) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("q", "n_g", "DR", "FAR", "replicates", "seed"))
    for pt in points:
        w.writerow([pt.q, pt.n_g, repr(pt.DR), repr(pt.FAR), config.replicates, config.seed])
    return buf.getvalue()


def bench_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("n_g", "exact_ns", "fast_ns"))
    for r in rows:
        exact = "" if math.isnan(r.exact_ns) else format_float(r.exact_ns)
        w.writerow([r.n_g, exact, format_float(r.fast_ns)])
    return buf.getvalue()


@dataclass
class ScenarioResult:
    """Event report plus its scoring against the scenario's ground truth."""

    report: EventReport
    model: DetectorModel
    truth: dict
    scoring: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "report": self.report.to_dict(),
            "scoring": self.scoring,
            "truth": self.truth,
        }


def _flows(columns: np.ndarray, n_g: int, q: int) -> list[MatrixFlow]:
    return ingest_samples(StreamCursor(columns.shape[0], n_g, q), columns)


def score_report(report: EventReport, truth: dict, *, train_seconds: float, flow_seconds: float) -> dict:
    """Onset and duration errors (seconds) and the localization hit."""
    if not report.flagged:
        return {"flagged": False, "onset_error_s": None, "duration_error_s": None,
                "localization_hit": False}
    onset_s = train_seconds + report.onset_flow_index * flow_seconds
    return {
        "flagged": True,
        "onset_s": onset_s,
        "onset_error_s": onset_s - truth["event_start_s"],
        "duration_error_s": report.duration_s - truth["duration_s"],
        "localization_hit": report.location == truth["channel"],
        "flow_seconds": flow_seconds,
    }


def run_scenario(config, *, refresh_every: int = 1, gamma_factor: float = 3.0, vst: str = "twoC",
                 variant: str = "exact") -> ScenarioResult:
    """Train on the scenario's normal segment, monitor its test segment and score the report."""
    if not isinstance(config, ScenarioConfig):
        config = load_scenario_config(config)
    sc = make_scenario(config)
    train_flows = _flows(sc.training, config.n_g, config.q)
    test_flows = _flows(sc.test, config.n_g, config.q)
    model = train(train_flows, window_seconds=config.window_seconds, vst=vst, variant=variant,
                  gamma_factor=gamma_factor)
    report, refreshed = monitor(model, test_flows, context=train_flows[-2:], refresh_every=refresh_every)
    scoring = {}
    if "channel" in sc.truth:
        scoring = score_report(report, sc.truth, train_seconds=config.train_seconds,
                               flow_seconds=model.flow_seconds)
    return ScenarioResult(report, refreshed, sc.truth, scoring)


@dataclass
class ReplayResult:
    report: EventReport
    model: DetectorModel
    top_channels: list

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "report": self.report.to_dict(),
            "top_channels": self.top_channels,
            "mu": self.model.mu,
            "sigma": self.model.sigma,
        }


def replay(path, p: int, n_g: int, q: int, *, sample_rate: float = 50.0, train_flows: int = 30,
           top_k: int = 2, orientation: str = "rows", header: bool = False,
           vst: str = "twoC", variant: str = "exact") -> ReplayResult:
    """Replay a recorded CSV stream: train on its first flows and monitor the rest.

    No ground truth is needed; the ``top_k`` channels by score magnitude
    are reported for inspection.
    """
    flows = load_csv(path, p, n_g, q, orientation=orientation, header=header)
    if len(flows) <= train_flows:
        raise PreconditionError(f"stream has {len(flows)} flows; need more than {train_flows}")
    model = train(flows[:train_flows], window_seconds=n_g / sample_rate, vst=vst, variant=variant)
    report, refreshed = monitor(model, flows[train_flows:], context=flows[:train_flows][-2:])
    top = []
    if report.scores:
        mag = np.abs(np.asarray(report.scores))
        top = [int(i) + 1 for i in np.argsort(-mag, kind="stable")[:top_k]]
    return ReplayResult(report, refreshed, top)


def _render(obj, fmt: str) -> str:
    if fmt == "csv":
        if isinstance(obj, RateTable):
            return obj.to_csv()
        if isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], BenchRow):
            return bench_csv(obj)
        raise ConfigError(f"{type(obj).__name__} has no CSV form; use json")
    if fmt == "json":
        if hasattr(obj, "to_dict"):
            return json.dumps(obj.to_dict(), indent=2) + "\n"
        raise ConfigError(f"{type(obj).__name__} has no JSON form")
    raise ConfigError(f"unknown format {fmt!r}; use csv or json")


def emit_report(obj, path, fmt: str = "json") -> str:
    """Serialize a table or report with stable field order and write it to ``path``.

    Returns the text written.  ``path=None`` only renders.
    """
    text = _render(obj, fmt)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
