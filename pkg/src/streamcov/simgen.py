"""Synthetic voltage-magnitude streams with measurement noise and load events.

Base profiles are static per-unit vectors shipped with the package (seeded
stand-ins in [0.94, 1.06] p.u., not power-flow solutions).  A load event on
channel ``rho`` is mapped to a voltage deviation through one scalar
sensitivity; the deviation carries a sample-level fluctuation proportional
to the load so that the event changes the covariance of the stream, not
only its mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, PreconditionError

CASES = ("flat", "ieee30", "ieee118", "polish2383")
CASE_SIZES = {"ieee30": 30, "ieee118": 118, "polish2383": 2383}
NOISE_VARIANCE = 0.05
GMN_SCALE = math.sqrt(NOISE_VARIANCE)  # 0.2236...
GMN_SHIFT = 1.0 - GMN_SCALE  # 0.7764...
GMN_PARAMETERIZATION = "gamma(shape=z0, scale=0.2236) + 0.7764*z0; mean z0, variance 0.05*z0"

DEFAULT_SENSITIVITY = 5e-4
DEFAULT_COUPLING = 0.1
DEFAULT_FLUCTUATION = 50.0


@dataclass(frozen=True)
class BaseProfile:
    """Steady-state per-unit voltage magnitudes ``z0``."""

    z0: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        z = np.asarray(self.z0, dtype=float).ravel()
        if z.size == 0 or not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise PreconditionError("z0 must be a nonempty vector of positive finite values")
        z.setflags(write=False)
        object.__setattr__(self, "z0", z)

    @property
    def p(self) -> int:
        return self.z0.size


def load_profile(case: str, p: int | None = None) -> BaseProfile:
    """Load a shipped profile; ``"flat"`` is all ones and needs ``p``."""
    if case == "flat":
        if p is None or p < 1:
            raise ConfigError("the flat profile needs a positive p")
        return BaseProfile(np.ones(int(p)), "flat")
    if case not in CASE_SIZES:
        raise ConfigError(f"unknown case {case!r}; choose from {CASES}")
    text = resources.files("streamcov").joinpath("data").joinpath(f"{case}.csv").read_text(encoding="utf-8")
    z0 = np.array([float(v) for v in text.split()])
    if p is not None and p != z0.size:
        raise DimensionError(f"case {case} has p={z0.size}, requested p={p}")
    return BaseProfile(z0, case)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _z0(profile) -> np.ndarray:
    return profile.z0 if isinstance(profile, BaseProfile) else BaseProfile(profile).z0


def gen_gsn(profile, count: int, seed=None) -> np.ndarray:
    """Gaussian noise columns: channel ``j`` is ``N(z0_j, 0.05 z0_j)``.

    Returns
    -------
    ndarray of shape (p, count)
    """
    if count < 1:
        raise PreconditionError("count must be at least 1")
    z0 = _z0(profile)[:, None]
    return z0 + np.sqrt(NOISE_VARIANCE * z0) * _rng(seed).standard_normal((z0.shape[0], count))


def gen_gmn(profile, count: int, seed=None) -> np.ndarray:
    """Gamma noise columns ``Gamma(shape=z0, scale=0.2236) + 0.7764 z0``.

    Channel ``j`` has mean ``z0_j`` and variance ``0.05 z0_j`` exactly,
    matching the Gaussian scenario in the first two moments.
    """
    if count < 1:
        raise PreconditionError("count must be at least 1")
    z0 = _z0(profile)[:, None]
    shape = np.broadcast_to(z0, (z0.shape[0], count))
    return _rng(seed).gamma(shape, GMN_SCALE) + GMN_SHIFT * z0


def gen_noise(profile, count: int, noise: str, seed=None) -> np.ndarray:
    noise = noise.upper()
    if noise == "GSN":
        return gen_gsn(profile, count, seed)
    if noise == "GMN":
        return gen_gmn(profile, count, seed)
    raise ConfigError(f"unknown noise scenario {noise!r}; use GSN or GMN")


SIGNAL_TABLES = {
    "I": ((1, 300, 40.0), (301, 600, 80.0), (601, 1000, 120.0)),
    "II": ((1, 300, -10.0), (301, 540, -25.1), (541, 780, -39.3), (781, 900, -62.7), (901, 1000, -75.3)),
    "III": ((1, 300, 10.0), (301, 600, 60.0), (601, 900, 120.0), (901, 1000, 35.0)),
}
SIGNAL_NAMES = {"I": "voltage dip", "II": "voltage swell", "III": "dip and swell"}


@dataclass(frozen=True)
class SignalSchedule:
    """Piecewise-constant load change on one channel.

    ``segments`` are ``(t_start, t_end, load_MW)`` with 1-based inclusive
    sample indices relative to the event start; ``target_channel`` is 1-based.
    """

    target_channel: int
    segments: tuple
    signal_type: str = "custom"

    def __post_init__(self):
        segs = tuple((int(a), int(b), float(v)) for a, b, v in self.segments)
        if not segs:
            raise PreconditionError("a schedule needs at least one segment")
        if segs[0][0] != 1:
            raise PreconditionError("the first segment must start at t=1")
        for (a, b, _), nxt in zip(segs, segs[1:] + (None,)):
            if b < a:
                raise PreconditionError(f"segment [{a}, {b}] is empty")
            if nxt is not None and nxt[0] != b + 1:
                raise PreconditionError("segments must be contiguous and ordered")
        if self.target_channel < 1:
            raise PreconditionError("target_channel is 1-based and must be positive")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_type(cls, signal_type: str, target_channel: int) -> "SignalSchedule":
        key = str(signal_type).upper()
        if key not in SIGNAL_TABLES:
            raise ConfigError(f"unknown signal type {signal_type!r}; use I, II or III")
        return cls(target_channel, SIGNAL_TABLES[key], key)

    @property
    def length(self) -> int:
        return self.segments[-1][1]

    def load_profile(self) -> np.ndarray:
        """Per-sample load in MW over ``t = 1..length``."""
        return np.concatenate([np.full(b - a + 1, v) for a, b, v in self.segments])


def apply_signal(series, schedule: SignalSchedule, sensitivity: float = DEFAULT_SENSITIVITY, *,
                 start_index: int = 0, coupling: float = DEFAULT_COUPLING,
                 fluctuation: float = DEFAULT_FLUCTUATION, seed=None) -> np.ndarray:
    """Return a copy of ``series`` with the schedule's voltage deviation added.

    Sample ``start_index + t - 1`` receives ``-sensitivity * MW_t * (1 + fluctuation * e_t) * J``
    where ``J`` is 1 on the target channel and ``coupling`` elsewhere, and
    ``e_t`` is standard normal noise demeaned within each segment, so every
    segment mean is shifted by exactly ``-sensitivity * MW``.
    """
    x = np.array(series, dtype=float, copy=True)
    if x.ndim != 2:
        raise DimensionError("series must be a (p, T) array")
    p, T = x.shape
    rho = schedule.target_channel
    if rho > p:
        raise PreconditionError(f"target channel {rho} outside 1..{p}")
    if start_index < 0 or start_index + schedule.length > T:
        raise PreconditionError(
            f"schedule spans samples {start_index}..{start_index + schedule.length - 1}, series has {T}"
        )
    if sensitivity == 0:
        return x
    mw = schedule.load_profile()
    eps = _rng(seed).standard_normal(mw.size)
    for a, b, _ in schedule.segments:
        seg = slice(a - 1, b)
        eps[seg] -= eps[seg].mean()
    dev = -sensitivity * mw * (1.0 + fluctuation * eps)
    J = np.full(p, float(coupling))
    J[rho - 1] = 1.0
    x[:, start_index:start_index + mw.size] += J[:, None] * dev[None, :]
    return x


@dataclass(frozen=True)
class ScenarioConfig:
    """Key-value description of one synthetic detection scenario.

    Times are in seconds; ``n_g`` samples at ``sample_rate`` Hz form one
    window, ``q`` windows one flow.
    """

    case: str = "ieee118"
    p: int = 0
    n_g: int = 100
    q: int = 5
    noise: str = "GSN"
    signal_type: str = "I"
    rho: int = 63
    seed: int = 0
    sensitivity: float = DEFAULT_SENSITIVITY
    coupling: float = DEFAULT_COUPLING
    fluctuation: float = DEFAULT_FLUCTUATION
    sample_rate: float = 50.0
    train_seconds: float = 300.0
    test_seconds: float = 60.0
    event_start: float = 320.0

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; choose from {CASES}")
        if self.case != "flat":
            if self.p not in (0, CASE_SIZES[self.case]):
                raise ConfigError(f"case {self.case} has p={CASE_SIZES[self.case]}, got p={self.p}")
            object.__setattr__(self, "p", CASE_SIZES[self.case])
        elif self.p < 1:
            raise ConfigError("the flat case needs p >= 1")
        if self.noise.upper() not in ("GSN", "GMN"):
            raise ConfigError(f"unknown noise {self.noise!r}")
        object.__setattr__(self, "noise", self.noise.upper())
        st = str(self.signal_type).upper()
        if st not in (*SIGNAL_TABLES, "NONE"):
            raise ConfigError(f"unknown signal type {self.signal_type!r}")
        object.__setattr__(self, "signal_type", st)
        if not 1 <= self.rho <= self.p:
            raise ConfigError(f"rho={self.rho} outside 1..{self.p}")

    @property
    def window_seconds(self) -> float:
        return self.n_g / self.sample_rate

    @property
    def train_samples(self) -> int:
        return int(round(self.train_seconds * self.sample_rate))

    @property
    def test_samples(self) -> int:
        return int(round(self.test_seconds * self.sample_rate))

    def schedule(self) -> SignalSchedule | None:
        if self.signal_type == "NONE":
            return None
        return SignalSchedule.from_type(self.signal_type, self.rho)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def _coerce(value: str, target):
    if isinstance(target, bool):
        return value.strip().lower() in ("1", "true", "yes")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    return value.strip()


def parse_key_values(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def load_scenario_config(path_or_text, **overrides) -> ScenarioConfig:
    """Read a :class:`ScenarioConfig` from a key-value file (or its text)."""
    p = Path(path_or_text) if not isinstance(path_or_text, str) or "\n" not in path_or_text else None
    text = p.read_text(encoding="utf-8") if p is not None else path_or_text
    raw = parse_key_values(text)
    defaults = ScenarioConfig.__dataclass_fields__
    kwargs = {}
    for key, value in raw.items():
        if key not in defaults:
            raise ConfigError(f"unknown scenario key {key!r}")
        kwargs[key] = _coerce(value, defaults[key].default)
    kwargs.update(overrides)
    return ScenarioConfig(**kwargs)


@dataclass
class Scenario:
    """A generated stream with its ground truth."""

    config: ScenarioConfig
    columns: np.ndarray
    truth: dict = field(default_factory=dict)

    @property
    def training(self) -> np.ndarray:
        return self.columns[:, :self.config.train_samples]

    @property
    def test(self) -> np.ndarray:
        return self.columns[:, self.config.train_samples:]

    def truth_json(self) -> str:
        return json.dumps(self.truth, indent=2, sort_keys=True) + "\n"


def make_scenario(config: ScenarioConfig) -> Scenario:
    """Training segment without events followed by a test segment carrying the schedule.

    Child seeds: noise from ``SeedSequence(seed, spawn_key=(0,))`` and the
    event fluctuation from ``spawn_key=(1,)``.
    """
    if not isinstance(config, ScenarioConfig):
        raise ConfigError("make_scenario expects a ScenarioConfig")
    profile = load_profile(config.case, config.p)
    total = config.train_samples + config.test_samples
    noise_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    cols = gen_noise(profile, total, config.noise, noise_rng)
    truth = {
        "case": config.case,
        "p": config.p,
        "noise": config.noise,
        "noise_parameterization": GMN_PARAMETERIZATION if config.noise == "GMN"
        else "normal(mean=z0, variance=0.05*z0)",
        "seed": config.seed,
        "sample_rate_hz": config.sample_rate,
        "train_seconds": config.train_seconds,
        "test_seconds": config.test_seconds,
        "signal_type": config.signal_type,
    }
    schedule = config.schedule()
    if schedule is not None:
        start = int(round(config.event_start * config.sample_rate))
        sig_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
        cols = apply_signal(cols, schedule, config.sensitivity, start_index=start,
                            coupling=config.coupling, fluctuation=config.fluctuation, seed=sig_rng)
        truth.update({
            "channel": config.rho,
            "event_start_s": start / config.sample_rate,
            "event_end_s": (start + schedule.length) / config.sample_rate,
            "duration_s": schedule.length / config.sample_rate,
            "sensitivity": config.sensitivity,
            "coupling": config.coupling,
            "fluctuation": config.fluctuation,
        })
    return Scenario(config, cols, truth)
