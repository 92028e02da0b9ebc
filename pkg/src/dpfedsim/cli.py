"""Command-line entry point: ``dpfedsim run|chart|summarize|account|presets``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .accountant import DEFAULT_ORDERS, AccountantState, compose_and_convert
from .errors import ChartError, ConfigurationError
from .harness.charts import ChartSpec, render_charts
from .harness.config import SCHEMA, ConfigValidationError, load_config
from .harness.presets import describe, get_preset
from .harness.runner import run_experiment
from .harness.summary import summarize


def _add_config_flags(parser):
    group = parser.add_argument_group("config overrides (flag wins over file)")
    for key, (section, _) in SCHEMA.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE",
                           help=f"[{section}] {key}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpfedsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config file or preset name")
    run.add_argument("config", help="path to a config file, or a preset name such as E1")
    run.add_argument("--full-scale", action="store_true", help="presets only: large client counts and 1000 rounds")
    run.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    run.add_argument("--out", help="output root (default: $DPFEDSIM_OUTPUT or the config's output_dir)")
    run.add_argument("--chart", action="store_true", help="render the accuracy chart afterwards")
    _add_config_flags(run)

    chart = sub.add_parser("chart", help="render SVG charts from a metrics CSV")
    chart.add_argument("metrics")
    chart.add_argument("--y", default="accuracy")
    chart.add_argument("--overlay", default="epsilon")
    chart.add_argument("--out-dir")

    summ = sub.add_parser("summarize", help="accuracy at checkpoint rounds")
    summ.add_argument("metrics")
    summ.add_argument("--checkpoints", help="comma-separated rounds (default: from the manifest)")
    summ.add_argument("--csv", help="also write the table as CSV here")

    acc = sub.add_parser("account", help="epsilon of the sampled Gaussian mechanism")
    acc.add_argument("--q", type=float, required=True)
    acc.add_argument("--noise", type=float, required=True)
    acc.add_argument("--rounds", type=int, required=True)
    acc.add_argument("--delta", type=float, default=1e-5)

    presets = sub.add_parser("presets", help="list built-in experiments")
    presets.add_argument("action", choices=["list"])
    return parser


def _manifest_checkpoints(metrics: Path):
    manifest = metrics.parent / "manifest.txt"
    if not manifest.exists():
        return None
    for line in manifest.read_text().splitlines():
        if line.startswith("checkpoints ="):
            return [int(v) for v in line.split("=", 1)[1].split(",") if v.strip()]
    return None


def cmd_run(args) -> int:
    path = Path(args.config)
    cfg = load_config(path) if path.exists() else get_preset(args.config, full_scale=args.full_scale)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if overrides:
        cfg = cfg.with_overrides(overrides)
    metrics = run_experiment(cfg, jobs=args.jobs, out=args.out)
    print(metrics)
    if args.chart:
        for svg in render_charts(metrics):
            print(svg)
    return 0


def cmd_chart(args) -> int:
    for svg in render_charts(args.metrics, args.out_dir, ChartSpec(y=args.y, overlay=args.overlay or None)):
        print(svg)
    return 0


def cmd_summarize(args) -> int:
    metrics = Path(args.metrics)
    if args.checkpoints:
        checkpoints = [int(v) for v in args.checkpoints.split(",") if v.strip()]
    else:
        checkpoints = _manifest_checkpoints(metrics) or [50, 100, 150, 200]
    table = summarize(metrics, checkpoints)
    sys.stdout.write(table.to_text())
    if args.csv:
        Path(args.csv).write_text(table.to_csv())
    return 0


def cmd_account(args) -> int:
    state = AccountantState(args.q, args.noise, DEFAULT_ORDERS)
    eps = compose_and_convert(state, args.rounds, args.delta)
    print(f"epsilon = {eps:.6g}  (q={args.q:g}, noise={args.noise:g}, rounds={args.rounds}, "
          f"delta={args.delta:g}, order={state.last_order})")
    return 0


def cmd_presets(args) -> int:
    for name, figure, sweep in describe():
        print(f"{name:24s} {figure:20s} sweep: {sweep or '-'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "chart": cmd_chart, "summarize": cmd_summarize,
               "account": cmd_account, "presets": cmd_presets}[args.command]
    try:
        return handler(args)
    except ConfigValidationError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (ConfigurationError, ChartError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
