"""Command-line entry point: ``gcnet <subcommand> [--config FILE] [--<key> VALUE ...]``.

Every :class:`~gcnet.pipeline.RunConfig` field is both a config-file key and
a ``--flag`` (underscores become dashes); flags override the file. Results go
to output files, logs to stderr. Exit status: 0 success, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GcnetError, ParseError, WindowingError
from .market_data import write_csv
from .pipeline import (
    BacktestCache, RunConfig, _Backtest, coerce, evaluate, load_snapshot, parse_config_text,
    predictions_csv, read_predictions, run_backtest, sweep_csv, sweep_n, test_range,
)
from .pld import pld_report

logger = logging.getLogger("gcnet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _config_flags(parser):
    group = parser.add_argument_group("run configuration (overrides --config)")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, default=None,
                           metavar=f.name.upper())
    parser.add_argument("--config", help="flat key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcnet", description="Graph-based stock movement prediction backtests.")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic market as per-ticker CSV files")
    _config_flags(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("build-graph", help="build one graph and write its edge list")
    _config_flags(p)
    p.add_argument("--date", help="build day (default: first test day)")
    p.add_argument("--out", required=True, help="edge-list CSV (a .json header is written next to it)")

    p = sub.add_parser("pld-report", help="node privileges and plausible labels for one day")
    _config_flags(p)
    p.add_argument("--date", help="target day (default: first test day)")
    p.add_argument("--out", required=True, help="report JSON")

    p = sub.add_parser("backtest", help="walk-forward backtest over the test range")
    _config_flags(p)
    p.add_argument("--seeds", type=int, default=1, help="run seeds seed..seed+k-1 and report mean/std")
    p.add_argument("--predictions", required=True, help="predictions CSV")
    p.add_argument("--metrics", required=True, help="metrics JSON")

    p = sub.add_parser("sweep-n", help="validation accuracy per label coverage n")
    _config_flags(p)
    p.add_argument("--n-values", required=True, help="comma-separated values in (0, 1]")
    p.add_argument("--out", required=True, help="curve CSV")

    p = sub.add_parser("eval", help="metrics from a predictions CSV")
    p.add_argument("predictions")
    p.add_argument("--metrics", required=True, help="metrics JSON")
    return parser


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    for f in fields(RunConfig):
        flag = getattr(args, "cfg_" + f.name, None)
        if flag is not None:
            values[f.name] = coerce(f.name, flag)
    return RunConfig(**values).validate()


@contextmanager
def _staged(*targets):
    """Yield temp paths; move them onto ``targets`` only if the block succeeds."""
    parent = Path(targets[0]).resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".gcnet-", dir=parent)
    tmp = [Path(staging) / f"{k}-{Path(t).name}" for k, t in enumerate(targets)]
    try:
        yield tmp
        for src, dst in zip(tmp, targets):
            Path(dst).parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)
            side = src.with_suffix(".json")
            if side.exists() and src.suffix != ".json":
                os.replace(side, Path(dst).with_suffix(".json"))
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _day(snapshot, config, date):
    if not date:
        return int(test_range(snapshot, config)[0])
    try:
        return snapshot.day_index(date)
    except (WindowingError, ValueError) as exc:
        raise ConfigurationError(f"--date: {exc}") from None


def cmd_synth(args, config):
    snapshot = load_snapshot(replace(config, data=""))
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise ConfigurationError(f"output directory {out} is not empty")
    out.resolve().parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".gcnet-", dir=out.resolve().parent))
    try:
        write_csv(snapshot, staging / "data")
        if out.exists():
            out.rmdir()
        os.replace(staging / "data", out)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    logger.info("wrote %d tickers x %d days to %s", snapshot.m, snapshot.n_days, out)


def cmd_build_graph(args, config):
    snapshot = load_snapshot(config)
    t = _day(snapshot, config, args.date)
    graph = _Backtest(config, snapshot, BacktestCache(snapshot)).graph(t)
    with _staged(args.out) as (tmp,):
        graph.save(tmp)
    logger.info("%s graph on %s: %d edges", config.graph_mode, snapshot.calendar[t], len(graph.edges))


def cmd_pld_report(args, config):
    snapshot = load_snapshot(config)
    t = _day(snapshot, config, args.date)
    bt = _Backtest(config, snapshot, BacktestCache(snapshot))
    graph = bt.graph(t)
    labeling, ranking = bt.labeling(t, graph, t)
    with _staged(args.out) as (tmp,):
        tmp.write_text(pld_report(snapshot.tickers, ranking, labeling) + "\n")


def cmd_backtest(args, config):
    if args.seeds < 1:
        raise ConfigurationError("--seeds must be >= 1")
    snapshot = load_snapshot(config)
    cache = BacktestCache(snapshot)
    runs = [run_backtest(replace(config, seed=config.seed + k), snapshot, cache) for k in range(args.seeds)]
    for run in runs:
        for date, reason in run.skipped:
            logger.warning("skipped %s: %s", date, reason)
    first = runs[0]
    if first.report is None:
        raise GcnetError("no test day has a realized outcome")
    metrics = first.report.as_dict()
    if args.seeds > 1:
        acc = np.array([r.report.accuracy for r in runs])
        mcc = np.array([r.report.mcc for r in runs])
        metrics["seeds"] = {
            "seeds": [config.seed + k for k in range(args.seeds)],
            "accuracy": acc.tolist(), "mcc": mcc.tolist(),
            "accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std()),
            "mcc_mean": float(mcc.mean()), "mcc_std": float(mcc.std()),
        }
    with _staged(args.predictions, args.metrics) as (pred_tmp, met_tmp):
        pred_tmp.write_text(predictions_csv(first.daily))
        met_tmp.write_text(_dump(metrics))


def cmd_sweep_n(args, config):
    try:
        values = [float(v) for v in args.n_values.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError("--n-values must be comma-separated numbers") from None
    rows, best = sweep_n(config, values)
    with _staged(args.out) as (tmp,):
        tmp.write_text(sweep_csv(rows))
    logger.info("selected n=%s", best)
    print(best)


def cmd_eval(args, _config=None):
    try:
        with open(args.predictions, newline="") as fh:
            results = read_predictions(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.predictions}: {exc}") from None
    with _staged(args.metrics) as (tmp,):
        tmp.write_text(_dump(evaluate(results).as_dict()))


COMMANDS = {
    "synth": cmd_synth, "build-graph": cmd_build_graph, "pld-report": cmd_pld_report,
    "backtest": cmd_backtest, "sweep-n": cmd_sweep_n, "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"gcnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args) if args.command != "eval" else None
        COMMANDS[args.command](args, config)
    except (ConfigurationError, ParseError) as exc:
        print(f"gcnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GcnetError as exc:
        print(f"gcnet: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
