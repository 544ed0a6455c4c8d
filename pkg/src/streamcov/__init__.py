"""Streaming covariance-equality tests for multichannel measurement flows."""

from .classical import CovarianceMatrix, clr_stat, f_correction, lr_stat, lr_stat_factored, sample_covariance
from .detector import (
    CovarianceEventDetector, DetectorModel, EventReport, detect, estimate_duration, localize, monitor, train,
)
from .errors import (
    ConfigError, DataError, DegenerateError, DimensionError, InapplicableError, PreconditionError,
    SingularityError, StreamcovError,
)
from .fastcompute import (
    GramMatrix, a_terms_fast, benchmark_scaling, c_fast, gram, principal_stat, unrepeated_ensemble,
)
from .harness import ExperimentConfig, RateTable, emit_report, replay, run_power_table, run_scenario, sweep_q
from .matrixflow import MatrixFlow, StreamCursor, WindowMatrix, ingest_samples, load_csv, write_csv
from .simgen import (
    BaseProfile, ScenarioConfig, SignalSchedule, apply_signal, gen_gmn, gen_gsn, load_profile, make_scenario,
)
from .ustat import (
    CovarianceFlowTest, TestResult, empirical_rates, far_threshold, gaussian_tail, multi_stat, pair_variance,
    pairwise_stat, standardize, tr_cross_estimate, tr_sq_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "BaseProfile", "ConfigError", "CovarianceEventDetector", "CovarianceFlowTest", "CovarianceMatrix",
    "DataError", "DegenerateError", "DetectorModel", "DimensionError", "EventReport", "ExperimentConfig",
    "GramMatrix", "InapplicableError", "MatrixFlow", "PreconditionError", "RateTable", "ScenarioConfig",
    "SignalSchedule", "SingularityError", "StreamCursor", "StreamcovError", "TestResult", "WindowMatrix",
    "a_terms_fast", "apply_signal", "benchmark_scaling", "c_fast", "clr_stat", "detect", "emit_report",
    "empirical_rates", "estimate_duration", "f_correction", "far_threshold", "gaussian_tail", "gen_gmn",
    "gen_gsn", "gram", "ingest_samples", "load_csv", "load_profile", "localize", "lr_stat",
    "lr_stat_factored", "make_scenario", "monitor", "multi_stat", "pair_variance", "pairwise_stat",
    "principal_stat", "replay", "run_power_table", "run_scenario", "sample_covariance", "standardize",
    "sweep_q", "tr_cross_estimate", "tr_sq_estimate", "train", "unrepeated_ensemble", "write_csv",
]
