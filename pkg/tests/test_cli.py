import json
import subprocess
import sys

import pytest

from streamcov import __version__
from streamcov.cli import EXIT_DATA, EXIT_EVENT, EXIT_OK, EXIT_USAGE, main

SMALL = ["--case", "ieee30", "--rho", "19", "--train-seconds", "0", "--test-seconds", "40", "--event-start", "20"]


@pytest.fixture(scope="module")
def streams(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    hist, ev = d / "hist.csv", d / "event.csv"
    assert main(["simulate", "--case", "ieee30", "--rho", "19", "--signal-type", "none",
                 "--train-seconds", "300", "--test-seconds", "0", "--seed", "4", "--out", str(hist)]) == EXIT_OK
    assert main(["simulate", *SMALL, "--seed", "5", "--out", str(ev)]) == EXIT_OK
    model = d / "model.json"
    assert main(["train", "--input", str(hist), "--p", "30", "--n-g", "100", "--q", "5", "--out", str(model)]) == EXIT_OK
    return d, hist, ev, model


def test_simulate_writes_truth(streams):
    d, _, ev, _ = streams
    truth = json.loads((d / "event.csv.truth.json").read_text())
    assert truth["channel"] == 19 and truth["event_start_s"] == 20.0
    assert len(ev.read_text().splitlines()) == 40 * 50


def test_train_model(streams):
    _, _, _, model = streams
    d = json.loads(model.read_text())
    assert (d["p"], d["n_g"], d["q"]) == (30, 100, 5)
    assert d["gamma"] == pytest.approx(3 * d["sigma"])


def test_detect_flags_event(streams, capsys):
    _, hist, ev, model = streams
    code = main(["detect", "--input", str(ev), "--model", str(model), "--history", str(hist)])
    report = json.loads(capsys.readouterr().out)
    assert code == EXIT_EVENT
    assert report["location"] == 19
    assert report["onset_flow_index"] == 2


def test_detect_quiet_stream(streams, tmp_path):
    _, hist, _, model = streams
    out = tmp_path / "r.json"
    assert main(["detect", "--input", str(hist), "--model", str(model), "--refresh-every", "0",
                 "--out", str(out)]) in (EXIT_OK, EXIT_EVENT)
    assert "flags" in json.loads(out.read_text())


def test_localize(streams, capsys):
    _, _, ev, _ = streams
    assert main(["localize", "--input", str(ev), "--p", "30", "--n-g", "100", "--q", "5",
                 "--event-index", "2"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["location"] == 19 and len(out["scores"]) == 30


def test_localize_needs_context(streams):
    _, _, ev, _ = streams
    assert main(["localize", "--input", str(ev), "--p", "30", "--n-g", "100", "--q", "5",
                 "--event-index", "1"]) == EXIT_USAGE


def test_scenario(capsys):
    assert main(["scenario", "--case", "ieee30", "--rho", "19", "--seed", "1"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["scoring"]["localization_hit"]


def test_power_table_csv(capsys):
    assert main(["power-table", "--grid", "6,12,2;40,30,3", "--methods", "proposed,LR", "--replicates", "100"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "p,n_g,q,method,DR,FAR,replicates,seed"
    assert lines[-1] == "40,30,3,LR,-,-,100,0"


def test_power_table_json(capsys):
    assert main(["power-table", "--grid", "6,12,2", "--replicates", "100", "--format", "json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["rows"][0]["p"] == 6


def test_sweep(capsys):
    assert main(["sweep-q", "--p", "4", "--budget", "24", "--qs", "2,3", "--replicates", "100"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == "q,n_g,DR,FAR,replicates,seed"


def test_bench(capsys):
    assert main(["bench", "--p", "3", "--sizes", "6,8", "--repetitions", "1", "--format", "json"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert [r["n_g"] for r in rows] == [6, 8]


def test_replay(tmp_path):
    stream, out = tmp_path / "s.csv", tmp_path / "replay.json"
    assert main(["simulate", "--case", "ieee30", "--rho", "7", "--train-seconds", "300",
                 "--test-seconds", "40", "--event-start", "320", "--seed", "2", "--out", str(stream)]) == EXIT_OK
    assert main(["replay", "--input", str(stream), "--p", "30", "--n-g", "100", "--q", "5",
                 "--out", str(out)]) == EXIT_OK
    res = json.loads(out.read_text())
    assert res["top_channels"][0] == 7


def test_config_file_supplies_options(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("grid=6,12,2\nreplicates=100\nseed=3\n")
    assert main(["power-table", "--config", str(cfg)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[1].endswith(",100,3")


def test_global_flags_after_subcommand(capsys):
    assert main(["power-table", "--grid", "6,12,2", "--replicates", "100", "--seed", "9", "--vst", "paper-literal"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[1].endswith(",9")


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["power-table", "--grid", "1,2"], ["bench", "--sizes", "x"], ["train"],
    ["power-table", "--format", "xml"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == EXIT_USAGE


def test_config_errors_are_usage_errors():
    assert main(["power-table", "--grid", "6,12,2", "--replicates", "10"]) == EXIT_USAGE
    assert main(["scenario", "--case", "ieee14"]) == EXIT_USAGE


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\nnan,3\n")
    assert main(["train", "--input", str(tmp_path / "missing.csv"), "--p", "2", "--n-g", "4", "--q", "2"]) == EXIT_DATA
    assert main(["train", "--input", str(bad), "--p", "2", "--n-g", "4", "--q", "2"]) == EXIT_DATA


def test_bad_model_file(streams, tmp_path):
    _, _, ev, _ = streams
    junk = tmp_path / "m.json"
    junk.write_text("not json")
    assert main(["detect", "--input", str(ev), "--model", str(junk)]) == EXIT_USAGE


def test_entry_point_version():
    out = subprocess.run([sys.executable, "-m", "streamcov.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
