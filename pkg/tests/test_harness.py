import csv
import io
import json

import numpy as np
import pytest
from scipy import stats

from streamcov import ConfigError, PreconditionError
from streamcov.detector import EventReport
from streamcov.fastcompute import BenchRow
from streamcov.harness import (
    RATE_HEADER,
    ExperimentConfig,
    RateTable,
    child_rng,
    clr_applicable,
    draw_flow,
    emit_report,
    lr_applicable,
    replay,
    run_power_table,
    run_scenario,
    score_report,
    sweep_csv,
    sweep_q,
)
from streamcov.matrixflow import write_csv
from streamcov.simgen import ScenarioConfig, gen_gsn, load_profile


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"replicates": 99}, {"tau": 0.0}, {"tau": 1.0}, {"methods": ("GLRT",)}, {"methods": ()},
        {"grid": ((30, 3, 10),)}, {"grid": ((30, 100),)}, {"grid": ((30, 100, 1),)},
        {"noise": "laplace"}, {"h1_windows": "all"}, {"h1_factor": 0.0},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_normalises(self):
        cfg = ExperimentConfig(grid=[[30, 100, 10]], noise="gmn", methods=["LR"])
        assert cfg.grid == ((30, 100, 10),) and cfg.noise == "GMN" and cfg.methods == ("LR",)


class TestDraws:
    def test_child_rng_reproducible(self):
        a = child_rng(3, 0, 1, 5).normal(size=4)
        np.testing.assert_array_equal(a, child_rng(3, 0, 1, 5).normal(size=4))
        assert not np.array_equal(a, child_rng(3, 0, 0, 5).normal(size=4))

    @pytest.mark.parametrize("windows,scaled", [("one", [3]), ("half", [2, 3])])
    def test_alternative_scales_noise(self, windows, scaled):
        prof = load_profile("flat", 4)
        base = draw_flow(prof, 20, 4, "GSN", child_rng(0, 1))
        alt = draw_flow(prof, 20, 4, "GSN", child_rng(0, 1), factor=4.0, windows=windows)
        for g in range(4):
            dev = alt.windows[g].data - 1.0
            want = (2.0 if g in scaled else 1.0) * (base.windows[g].data - 1.0)
            np.testing.assert_allclose(dev, want, rtol=1e-12, atol=1e-14)

    def test_applicability(self):
        assert lr_applicable(30, 100) and not lr_applicable(30, 30)
        assert clr_applicable(30, 100) and not clr_applicable(99, 100)


class TestPowerTable:
    @pytest.mark.slow
    def test_proposed_rates(self):
        row = run_power_table(ExperimentConfig(replicates=1000)).get(30, 100, 10, "proposed")
        assert 0.03 <= row.FAR <= 0.09
        assert row.DR >= 0.85

    def test_lr_inapplicable_marker(self):
        table = run_power_table(ExperimentConfig(grid=((118, 30, 10),), methods=("LR", "CLR"), replicates=100))
        assert all(not r.applicable for r in table.rows)
        lines = table.to_csv().splitlines()
        assert lines[0] == ",".join(RATE_HEADER)
        assert lines[1] == "118,30,10,LR,-,-,100,0"

    def test_reproducible(self):
        cfg = ExperimentConfig(grid=((8, 20, 3),), replicates=100, methods=("proposed", "LR", "CLR"), seed=4)
        assert run_power_table(cfg).to_csv() == run_power_table(cfg).to_csv()

    def test_worker_count_does_not_matter(self):
        cfg = ExperimentConfig(grid=((8, 20, 3),), replicates=100, seed=5)
        par = ExperimentConfig(**{**cfg.__dict__, "n_jobs": 2})
        assert run_power_table(cfg).to_csv() == run_power_table(par).to_csv()

    def test_null_streams_isolated_from_alternative(self):
        base = ExperimentConfig(grid=((8, 20, 3),), replicates=100, methods=("proposed", "LR"), seed=6)
        strong = ExperimentConfig(**{**base.__dict__, "h1_factor": 5.0})
        a, b = run_power_table(base), run_power_table(strong)
        for m in ("proposed", "LR"):
            assert a.get(8, 20, 3, m).FAR == b.get(8, 20, 3, m).FAR
        assert b.get(8, 20, 3, "proposed").DR >= a.get(8, 20, 3, "proposed").DR

    def test_rates_in_unit_interval(self):
        table = run_power_table(ExperimentConfig(grid=((6, 12, 2), (4, 30, 4)), replicates=100,
                                                 methods=("proposed", "LR", "CLR")))
        for r in table.rows:
            assert 0.0 <= r.DR <= 1.0 and 0.0 <= r.FAR <= 1.0
        with pytest.raises(KeyError):
            table.get(1, 2, 3, "LR")


SWEEP = ExperimentConfig(grid=((30, 100, 2),), replicates=200, h1_factor=1.3, h1_windows="half")


def trend(points):
    return stats.spearmanr([p.q for p in points], [p.DR for p in points]).statistic


class TestSweep:
    @pytest.mark.slow
    def test_fixed_total_decreases(self):
        pts = sweep_q(600, "fixed_total", SWEEP, [2, 3, 5, 6, 10])
        assert [p.n_g for p in pts] == [300, 200, 120, 100, 60]
        assert trend(pts) < 0
        assert all(b.DR <= a.DR + 0.05 for a, b in zip(pts, pts[1:]))

    @pytest.mark.slow
    def test_fixed_window_increases(self):
        pts = sweep_q(100, "fixed_window", SWEEP, [2, 4, 6, 8, 10])
        assert all(p.n_g == 100 for p in pts)
        assert trend(pts) > 0
        assert pts[-1].DR - pts[0].DR > 0.15
        assert all(b.DR >= a.DR - 0.1 for a, b in zip(pts, pts[1:]))

    @pytest.mark.parametrize("budget,mode,qs", [
        (600, "fixed_total", [1]), (600, "fixed_total", [7]), (12, "fixed_total", [4]),
        (100, "fixed_window", [1]), (600, "rolling", [2]),
    ])
    def test_rejects(self, budget, mode, qs):
        with pytest.raises(ConfigError):
            sweep_q(budget, mode, SWEEP, qs)

    def test_default_qs_and_csv(self):
        cfg = ExperimentConfig(grid=((4, 10, 2),), replicates=100)
        pts = sweep_q(24, "fixed_total", cfg)
        assert [p.q for p in pts] == [2, 3, 4, 6]
        rows = list(csv.reader(io.StringIO(sweep_csv(pts, cfg))))
        assert rows[0] == ["q", "n_g", "DR", "FAR", "replicates", "seed"]
        assert len(rows) == 5


class TestReports:
    def test_rate_table_csv(self, tmp_path):
        table = run_power_table(ExperimentConfig(grid=((4, 10, 2),), replicates=100))
        text = emit_report(table, tmp_path / "t.csv", "csv")
        assert (tmp_path / "t.csv").read_text() == text
        assert text.splitlines()[0] == "p,n_g,q,method,DR,FAR,replicates,seed"
        assert json.loads(emit_report(table, None, "json"))["rows"][0]["method"] == "proposed"

    def test_event_report_json(self):
        rep = EventReport((False, True), 2.5, 10.0, 3, 1, (0.1, 0.2), (0.0, 2.5))
        d = json.loads(emit_report(rep, None, "json"))
        assert d["onset_flow_index"] == 1 and d["location"] == 3 and d["flags"] == [False, True]

    def test_bench_csv(self):
        text = emit_report([BenchRow(20, 1.5, 0.5), BenchRow(400, float("nan"), 9.0)], None, "csv")
        assert text.splitlines() == ["n_g,exact_ns,fast_ns", "20,1.5,0.5", "400,,9"]

    def test_unknown_format(self):
        with pytest.raises(ConfigError):
            emit_report(RateTable(), None, "xml")

    def test_report_without_csv_form(self):
        with pytest.raises(ConfigError):
            emit_report(EventReport((False,)), None, "csv")


class TestScenarioRuns:
    def test_ieee30_run(self):
        res = run_scenario(ScenarioConfig(case="ieee30", rho=19, noise="GMN", seed=2))
        s = res.scoring
        assert s["flagged"] and s["localization_hit"]
        assert abs(s["duration_error_s"]) <= s["flow_seconds"]
        assert abs(s["onset_error_s"]) <= s["flow_seconds"]
        assert res.to_dict()["truth"]["channel"] == 19

    def test_from_config_file(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text(ScenarioConfig(case="ieee30", rho=19, seed=3).to_text())
        assert run_scenario(path).to_dict() == run_scenario(path).to_dict()

    def test_score_unflagged(self):
        s = score_report(EventReport((False,)), {"channel": 1}, train_seconds=1, flow_seconds=1)
        assert s == {"flagged": False, "onset_error_s": None, "duration_error_s": None,
                     "localization_hit": False}

    def test_replay(self, tmp_path):
        prof = load_profile("flat", 6)
        cols = gen_gsn(prof, 36 * 100, 0)
        cols[4, 33 * 100:34 * 100] += 0.5 * np.random.default_rng(1).normal(size=100)
        path = tmp_path / "stream.csv"
        write_csv(path, cols)
        res = replay(path, 6, 20, 5, sample_rate=20.0, top_k=2)
        assert res.report.flagged
        assert res.top_channels[0] == 5 and len(res.top_channels) == 2
        assert json.loads(emit_report(res, None, "json"))["top_channels"] == res.top_channels

    def test_replay_too_short(self, tmp_path):
        path = tmp_path / "short.csv"
        write_csv(path, gen_gsn(load_profile("flat", 2), 400, 0))
        with pytest.raises(PreconditionError):
            replay(path, 2, 20, 5)
