import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from streamcov import (
    CovarianceEventDetector,
    DegenerateError,
    DetectorModel,
    DimensionError,
    EventReport,
    MatrixFlow,
    PreconditionError,
    detect,
    estimate_duration,
    localize,
    monitor,
    multi_stat,
    train,
)
from streamcov.detector import MIN_TRAINING_FLOWS, SCHEMA_VERSION, numerical_rank
from streamcov.simgen import SignalSchedule, apply_signal, gen_gsn, load_profile


def h0_flows(rng, count, p=10, n_g=40, q=4):
    return [MatrixFlow.from_array(rng.normal(size=(q, p, n_g))) for _ in range(count)]


@pytest.fixture(scope="module")
def model():
    return train(h0_flows(np.random.default_rng(0), 60), window_seconds=0.8)


class TestTrain:
    def test_statistics(self, model):
        assert model.training_flow_count == 60
        assert model.gamma == pytest.approx(3 * model.sigma)
        assert (model.p, model.n_g, model.q) == (10, 40, 4)
        assert model.flow_seconds == pytest.approx(3.2)
        vals = np.array(model.history)
        assert model.mu == pytest.approx(vals.mean())
        assert model.sigma == pytest.approx(vals.std(ddof=1))

    def test_large_null_history(self):
        rng = np.random.default_rng(1)
        prof = load_profile("ieee118")
        flows = [MatrixFlow.from_columns(gen_gsn(prof, 500, rng), 5) for _ in range(100)]
        m = train(flows)
        assert abs(m.mu) < 0.5 * m.sigma

    def test_too_few(self):
        with pytest.raises(PreconditionError, match="30"):
            train(h0_flows(np.random.default_rng(2), MIN_TRAINING_FLOWS - 1))

    def test_mixed_configs(self):
        rng = np.random.default_rng(3)
        flows = h0_flows(rng, 30) + h0_flows(rng, 1, n_g=41)
        with pytest.raises(DimensionError):
            train(flows)

    def test_zero_history_is_degenerate(self):
        m = train([np.zeros((3, 2, 5))] * 30)
        assert (m.mu, m.sigma, m.gamma) == (0.0, 0.0, 0.0)
        assert m.degenerate
        with pytest.raises(DegenerateError, match="retrain"):
            detect(m, np.zeros((3, 2, 5)))

    def test_bad_window_seconds(self):
        with pytest.raises(PreconditionError):
            train(h0_flows(np.random.default_rng(4), 30), window_seconds=0.0)

    def test_json_roundtrip(self, model):
        text = model.to_json()
        assert json.loads(text)["schema_version"] == SCHEMA_VERSION
        assert DetectorModel.from_json(text) == model


class TestDetect:
    def test_null_flag_rate(self, model):
        rng = np.random.default_rng(5)
        flags = [detect(model, f)[0] for f in h0_flows(rng, 1000)]
        assert np.mean(flags) <= 0.02

    def test_doubled_window_flagged(self):
        rng = np.random.default_rng(6)
        prof = load_profile("ieee118")
        def draw(factor):
            arr = np.stack(np.split(gen_gsn(prof, 500, rng), 5, axis=1))
            arr[-1] = prof.z0[:, None] + math.sqrt(factor) * (arr[-1] - prof.z0[:, None])
            return MatrixFlow.from_array(arr)
        m = train([draw(1.0) for _ in range(60)])
        assert np.mean([detect(m, draw(2.0))[0] for _ in range(200)]) >= 0.95

    def test_boundary_is_inclusive(self, model):
        f = h0_flows(np.random.default_rng(7), 1)[0]
        v = multi_stat(f)
        edge = replace(model, mu=0.0, gamma=abs(v))
        assert detect(edge, f) == (True, v)

    def test_flow_equal_to_mean_never_flags(self, model):
        f = h0_flows(np.random.default_rng(8), 1)[0]
        centred = replace(model, mu=multi_stat(f))
        assert detect(centred, f)[0] is False

    def test_config_mismatch(self, model):
        with pytest.raises(DimensionError):
            detect(model, np.zeros((4, 10, 41)))


class TestDuration:
    def test_ten_flagged_flows(self):
        assert estimate_duration([True] * 10, 5, 0.4) == pytest.approx(20.0)

    def test_no_flags(self):
        assert estimate_duration([False] * 4, 5, 0.4) == 0.0

    def test_replay_example(self):
        # q = 5, n_g = 50 at 50 Hz; two flagged flows against an 7.9 s event
        est = estimate_duration([False, True, True, False], 5, 1.0)
        assert abs(est - 7.9) <= 5 * 1.0

    @given(st.lists(st.booleans()), st.lists(st.booleans()), st.integers(2, 10), st.floats(0.01, 5))
    def test_additive(self, a, b, q, t):
        assert estimate_duration(a + b, q, t) == pytest.approx(
            estimate_duration(a, q, t) + estimate_duration(b, q, t)
        )

    def test_positive_window(self):
        with pytest.raises(PreconditionError):
            estimate_duration([True], 5, 0.0)


def event_stream(channel, seed=0, q=5, n_g=100, mw=80.0):
    prof = load_profile("ieee30")
    rng = np.random.default_rng(seed)
    cols = gen_gsn(prof, 3 * q * n_g, rng)
    sched = SignalSchedule(channel, ((1, q * n_g, mw),))
    cols = apply_signal(cols, sched, start_index=2 * q * n_g, seed=rng)
    return [MatrixFlow.from_columns(c, q) for c in np.split(cols, 3, axis=1)]


class TestLocalize:
    @pytest.mark.parametrize("channel", [1, 7, 19, 30])
    def test_finds_channel(self, channel):
        prev2, prev, event = event_stream(channel, seed=channel)
        loc, scores = localize(prev2, prev, event)
        assert loc == channel
        assert scores.shape == (30,)

    def test_scale_invariance(self):
        flows = event_stream(12, seed=3)
        loc, scores = localize(*flows)
        scaled = [MatrixFlow.from_array(2.5 * f.as_array()) for f in flows]
        loc2, scores2 = localize(*scaled)
        assert loc2 == loc
        np.testing.assert_allclose(scores2, 2.5 ** 4 * scores, rtol=1e-8)

    def test_constant_event_ties_to_first(self):
        prev2, prev, _ = event_stream(3, seed=4)
        event = MatrixFlow.from_array(np.ones((5, 30, 100)))
        loc, scores = localize(prev2, prev, event)
        assert loc == 1
        assert np.ptp(scores) == 0.0

    def test_all_constant_with_explicit_kappa(self):
        const = MatrixFlow.from_array(np.ones((2, 3, 4)))
        loc, scores = localize(const, const, const, kappa=2)
        assert loc == 1 and not scores.any()

    def test_rank_zero(self):
        zero = MatrixFlow.from_array(np.zeros((2, 3, 4)))
        with pytest.raises(DegenerateError):
            localize(zero, zero, zero)

    def test_mismatch(self):
        a = MatrixFlow.from_array(np.ones((2, 3, 4)))
        b = MatrixFlow.from_array(np.ones((2, 3, 5)))
        with pytest.raises(DimensionError):
            localize(a, a, b)

    def test_kappa_must_be_positive(self):
        flows = event_stream(2, seed=5)
        with pytest.raises(PreconditionError):
            localize(*flows, kappa=0)

    def test_numerical_rank(self):
        x = np.random.default_rng(0).normal(size=(5, 3)) @ np.random.default_rng(1).normal(size=(3, 20))
        assert numerical_rank(x) == 3
        assert numerical_rank(np.zeros((3, 3))) == 0


class TestMonitor:
    def test_report_for_event(self):
        rng = np.random.default_rng(9)
        prof = load_profile("ieee30")
        train_flows = [MatrixFlow.from_columns(gen_gsn(prof, 500, rng), 5) for _ in range(30)]
        m = train(train_flows, window_seconds=2.0)
        cols = gen_gsn(prof, 6 * 500, rng)
        cols = apply_signal(cols, SignalSchedule(19, ((1, 1000, 80.0),)), start_index=1500, seed=rng)
        flows = [MatrixFlow.from_columns(c, 5) for c in np.split(cols, 6, axis=1)]
        report, refreshed = monitor(m, flows, context=train_flows[-2:])
        assert report.flagged
        assert report.onset_flow_index == 3
        assert report.location == 19
        assert report.duration_s == pytest.approx(20.0)
        assert report.magnitude == report.statistics[3]
        assert refreshed.training_flow_count == 30 + sum(not f for f in report.flags)
        d = json.loads(report.to_json())
        assert {"onset_flow_index", "magnitude", "duration_s", "location", "flags", "scores"} <= set(d)

    def test_quiet_stream(self, model):
        flows = h0_flows(np.random.default_rng(10), 5)
        report, _ = monitor(replace(model, gamma=1e9), flows)
        assert not report.flagged
        assert report.duration_s == 0.0 and report.location is None

    def test_refresh_disabled(self, model):
        flows = h0_flows(np.random.default_rng(11), 3)
        _, after = monitor(replace(model, gamma=1e9), flows, refresh_every=0)
        assert after.training_flow_count == model.training_flow_count

    def test_refresh_cadence(self, model):
        flows = h0_flows(np.random.default_rng(12), 5)
        _, after = monitor(replace(model, gamma=1e9), flows, refresh_every=2)
        assert after.training_flow_count == model.training_flow_count + 4

    def test_deterministic(self, model):
        flows = h0_flows(np.random.default_rng(13), 4)
        flows[2] = MatrixFlow.from_array(flows[2].as_array() * 3.0)
        a, _ = monitor(model, flows)
        b, _ = monitor(model, flows)
        assert a.to_json() == b.to_json()
        assert a.flagged


class TestEstimator:
    def test_params_and_clone(self):
        est = CovarianceEventDetector(window_seconds=2.0, gamma_factor=4.0)
        assert est.get_params()["gamma_factor"] == 4.0
        assert clone(est).get_params() == est.get_params()

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            CovarianceEventDetector().predict([np.zeros((2, 2, 4))])

    def test_fit_predict(self):
        rng = np.random.default_rng(14)
        est = CovarianceEventDetector(window_seconds=0.8).fit(h0_flows(rng, 40))
        flows = h0_flows(rng, 3)
        flows[1] = MatrixFlow.from_array(flows[1].as_array() * np.r_[1.0, 1.0, 1.0, 3.0][:, None, None])
        pred = est.predict(flows)
        assert pred[1] == 1
        np.testing.assert_array_equal(pred, (est.decision_function(flows) >= 0).astype(int))
        assert len(est.context_) == 2
        assert isinstance(est.monitor(flows), EventReport)

    def test_fit_too_few(self):
        with pytest.raises(PreconditionError):
            CovarianceEventDetector().fit(h0_flows(np.random.default_rng(15), 5))
