"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 event detected (``detect`` only).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .detector import DetectorModel, localize, monitor, train
from .errors import ConfigError, StreamcovError
from .fastcompute import benchmark_scaling
from .harness import (
    ExperimentConfig, _flows, emit_report, replay, run_power_table, run_scenario, sweep_csv, sweep_q,
)
from .matrixflow import load_csv, read_csv_columns, write_csv
from .simgen import ScenarioConfig, make_scenario, parse_key_values

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EVENT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _grid(text: str) -> tuple:
    cells = []
    for chunk in text.split(";"):
        if chunk.strip():
            vals = _int_list(chunk)
            if len(vals) != 3:
                raise argparse.ArgumentTypeError(f"grid cell {chunk!r} is not p,n_g,q")
            cells.append(tuple(vals))
    return tuple(cells)


def _add_stream_args(sp, *, shape: bool = True):
    sp.add_argument("--input", required=True, help="CSV stream")
    if shape:
        sp.add_argument("--p", type=int, required=True)
        sp.add_argument("--n-g", dest="n_g", type=int, required=True)
        sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--orientation", choices=("rows", "columns"), default="rows")
    sp.add_argument("--header", action="store_true", help="skip one header line")


def _add_scenario_args(sp):
    d = argparse.Namespace(**{k: f.default for k, f in ScenarioConfig.__dataclass_fields__.items()})
    sp.add_argument("--case", default=d.case)
    sp.add_argument("--p", type=int, default=d.p)
    sp.add_argument("--n-g", dest="n_g", type=int, default=d.n_g)
    sp.add_argument("--q", type=int, default=d.q)
    sp.add_argument("--noise", default=d.noise)
    sp.add_argument("--signal-type", dest="signal_type", default=d.signal_type)
    sp.add_argument("--rho", type=int, default=d.rho)
    sp.add_argument("--sensitivity", type=float, default=d.sensitivity)
    sp.add_argument("--coupling", type=float, default=d.coupling)
    sp.add_argument("--fluctuation", type=float, default=d.fluctuation)
    sp.add_argument("--sample-rate", dest="sample_rate", type=float, default=d.sample_rate)
    sp.add_argument("--train-seconds", dest="train_seconds", type=float, default=d.train_seconds)
    sp.add_argument("--test-seconds", dest="test_seconds", type=float, default=d.test_seconds)
    sp.add_argument("--event-start", dest="event_start", type=float, default=d.event_start)


def _add_experiment_args(sp, *, h1_windows: str):
    sp.add_argument("--noise", default="GSN")
    sp.add_argument("--replicates", type=int, default=200)
    sp.add_argument("--tau", type=float, default=0.05)
    sp.add_argument("--h1-factor", dest="h1_factor", type=float, default=2.0)
    sp.add_argument("--h1-windows", dest="h1_windows", choices=("one", "half"), default=h1_windows)
    sp.add_argument("--variance", default="moment")
    sp.add_argument("--n-jobs", dest="n_jobs", type=int, default=1)


def _add_global_args(p, *, suppress: bool) -> None:
    def default(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--seed", type=int, default=default(0))
    p.add_argument("--config", default=default(None), help="key=value file supplying option defaults")
    p.add_argument("--format", choices=("csv", "json"), default=default(None))
    p.add_argument("--variant", choices=("exact", "principal"), default=default("exact"))
    p.add_argument("--vst", choices=("twoC", "paper-literal"), default=default("twoC"))


class _SubParser(_Parser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # global flags are also accepted after the subcommand
        _add_global_args(self, suppress=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamcov", description="Streaming covariance-equality event detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global_args(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_SubParser, required=True)

    sp = sub.add_parser("simulate", help="generate a scenario stream and its ground truth")
    _add_scenario_args(sp)
    sp.add_argument("--out", required=True, help="stream CSV (rows are samples)")
    sp.add_argument("--truth", help="ground-truth JSON (default: <out>.truth.json)")

    sp = sub.add_parser("scenario", help="simulate, train, monitor and score one scenario")
    _add_scenario_args(sp)
    sp.add_argument("--out")

    sp = sub.add_parser("train", help="learn the detector baseline from normal data")
    _add_stream_args(sp)
    sp.add_argument("--sample-rate", dest="sample_rate", type=float, default=50.0)
    sp.add_argument("--min-flows", dest="min_flows", type=int, default=30)
    sp.add_argument("--gamma-factor", dest="gamma_factor", type=float, default=3.0)
    sp.add_argument("--out")

    sp = sub.add_parser("detect", help="monitor a stream with a trained model")
    _add_stream_args(sp, shape=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--history", help="CSV of normal data preceding the stream (localization context)")
    sp.add_argument("--refresh-every", dest="refresh_every", type=int, default=1)
    sp.add_argument("--out")

    sp = sub.add_parser("localize", help="rank channels for an event flow")
    _add_stream_args(sp)
    sp.add_argument("--event-index", dest="event_index", type=int, default=2,
                    help="0-based flow index of the event; the two flows before it are the reference")
    sp.add_argument("--kappa", type=int)
    sp.add_argument("--out")

    sp = sub.add_parser("power-table", help="Monte Carlo DR/FAR table")
    sp.add_argument("--grid", type=_grid, default=((30, 100, 10),), help='"p,n_g,q;p,n_g,q"')
    sp.add_argument("--methods", default="proposed")
    _add_experiment_args(sp, h1_windows="one")
    sp.add_argument("--out")

    sp = sub.add_parser("sweep-q", help="detection rate against q")
    sp.add_argument("--budget", type=int, default=600)
    sp.add_argument("--mode", choices=("fixed_total", "fixed_window"), default="fixed_total")
    sp.add_argument("--p", type=int, default=30)
    sp.add_argument("--qs", type=_int_list)
    _add_experiment_args(sp, h1_windows="half")
    sp.add_argument("--out")

    sp = sub.add_parser("bench", help="timing of the exact and fast paths")
    sp.add_argument("--p", type=int, default=30)
    sp.add_argument("--sizes", type=_int_list, default=[20, 40, 200, 400])
    sp.add_argument("--repetitions", type=int, default=5)
    sp.add_argument("--literal-max", dest="literal_max", type=int, default=48)
    sp.add_argument("--out")

    sp = sub.add_parser("replay", help="train on the start of a recorded stream and monitor the rest")
    _add_stream_args(sp)
    sp.add_argument("--sample-rate", dest="sample_rate", type=float, default=50.0)
    sp.add_argument("--train-flows", dest="train_flows", type=int, default=30)
    sp.add_argument("--top-k", dest="top_k", type=int, default=2)
    sp.add_argument("--out")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    try:
        text = Path(known.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc.strerror}") from None
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices[command]
    globals_ = {"seed", "config", "format", "variant", "vst"}
    targets = [(sp, {a.dest: a for a in sp._actions if a.dest not in globals_}),
               (parser, {a.dest: a for a in parser._actions})]
    for key, raw in parse_key_values(text).items():
        for target, actions in targets:
            action = actions.get(key)
            if action is None or key in ("help", "config", "command"):
                continue
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    value = raw.lower() in ("1", "true", "yes")
                else:
                    value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
            action.required = False
            target.set_defaults(**{key: value})
            break
        else:
            if key not in ScenarioConfig.__dataclass_fields__:
                raise ConfigError(f"config key {key!r} is not an option of {command!r}")
    return parser.parse_args(argv)


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _scenario_config(args) -> ScenarioConfig:
    return ScenarioConfig(
        case=args.case, p=args.p, n_g=args.n_g, q=args.q, noise=args.noise,
        signal_type=args.signal_type, rho=args.rho, seed=args.seed, sensitivity=args.sensitivity,
        coupling=args.coupling, fluctuation=args.fluctuation, sample_rate=args.sample_rate,
        train_seconds=args.train_seconds, test_seconds=args.test_seconds, event_start=args.event_start,
    )


def _fmt(args, default: str) -> str:
    return args.format or default


def _cmd_simulate(args) -> int:
    sc = make_scenario(_scenario_config(args))
    write_csv(args.out, sc.columns)
    Path(args.truth or f"{args.out}.truth.json").write_text(sc.truth_json(), encoding="utf-8")
    return EXIT_OK


def _cmd_scenario(args) -> int:
    res = run_scenario(_scenario_config(args), vst=args.vst, variant=args.variant)
    _write(emit_report(res, None, _fmt(args, "json")), args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    flows = load_csv(args.input, args.p, args.n_g, args.q, orientation=args.orientation, header=args.header)
    model = train(flows, window_seconds=args.n_g / args.sample_rate, vst=args.vst, variant=args.variant,
                  gamma_factor=args.gamma_factor, min_flows=args.min_flows)
    if _fmt(args, "json") != "json":
        raise ConfigError("train writes JSON only")
    _write(model.to_json(), args.out)
    return EXIT_OK


def _cmd_detect(args) -> int:
    try:
        model = DetectorModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.model}: not a model file ({exc.msg})") from None
    flows = load_csv(args.input, model.p, model.n_g, model.q, orientation=args.orientation,
                     header=args.header)
    context = []
    if args.history:
        block = read_csv_columns(args.history, model.p, orientation=args.orientation, header=args.header)
        context = _flows(block, model.n_g, model.q)[-2:] if block.shape[1] else []
    report, _ = monitor(model, flows, context=context, refresh_every=args.refresh_every)
    _write(emit_report(report, None, _fmt(args, "json")), args.out)
    return EXIT_EVENT if report.flagged else EXIT_OK


def _cmd_localize(args) -> int:
    flows = load_csv(args.input, args.p, args.n_g, args.q, orientation=args.orientation, header=args.header)
    k = args.event_index
    if k < 2 or k >= len(flows):
        raise ConfigError(f"event index {k} needs two preceding flows; stream has {len(flows)} flows")
    loc, scores = localize(flows[k - 2], flows[k - 1], flows[k], kappa=args.kappa, vst=args.vst)
    if _fmt(args, "json") != "json":
        raise ConfigError("localize writes JSON only")
    _write(_json({"schema_version": 1, "location": loc, "scores": [float(s) for s in scores]}), args.out)
    return EXIT_OK


def _experiment(args, grid, methods) -> ExperimentConfig:
    return ExperimentConfig(
        grid=grid, noise=args.noise, replicates=args.replicates, tau=args.tau, methods=methods,
        seed=args.seed, h1_factor=args.h1_factor, h1_windows=args.h1_windows, variance=args.variance,
        vst=args.vst, variant=args.variant, n_jobs=args.n_jobs,
    )


def _cmd_power_table(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    table = run_power_table(_experiment(args, args.grid, methods))
    _write(emit_report(table, None, _fmt(args, "csv")), args.out)
    return EXIT_OK


def _cmd_sweep_q(args) -> int:
    cfg = _experiment(args, ((args.p, 100, 2),), ("proposed",))
    points = sweep_q(args.budget, args.mode, cfg, args.qs)
    if _fmt(args, "csv") == "csv":
        text = sweep_csv(points, cfg)
    else:
        text = _json({"schema_version": 1, "mode": args.mode, "budget": args.budget,
                      "points": [pt.__dict__ for pt in points]})
    _write(text, args.out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    rows = benchmark_scaling(args.p, args.sizes, args.repetitions, seed=args.seed,
                             literal_max=args.literal_max)
    if _fmt(args, "csv") == "csv":
        text = emit_report(rows, None, "csv")
    else:
        text = _json({"schema_version": 1, "p": args.p, "rows": [r.__dict__ for r in rows]})
    _write(text, args.out)
    return EXIT_OK


def _cmd_replay(args) -> int:
    res = replay(args.input, args.p, args.n_g, args.q, sample_rate=args.sample_rate,
                 train_flows=args.train_flows, top_k=args.top_k, orientation=args.orientation,
                 header=args.header, vst=args.vst, variant=args.variant)
    _write(emit_report(res, None, _fmt(args, "json")), args.out)
    return EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate,
    "scenario": _cmd_scenario,
    "train": _cmd_train,
    "detect": _cmd_detect,
    "localize": _cmd_localize,
    "power-table": _cmd_power_table,
    "sweep-q": _cmd_sweep_q,
    "bench": _cmd_bench,
    "replay": _cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"streamcov: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StreamcovError, OSError) as exc:
        print(f"streamcov: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
