from __future__ import annotations

import argparse
import json
import sys

from app.models.config import ExperimentConfig, default_config, load_config, validate_config
from app.services.errors import ConfigError, DomainError, NumericalFailureError
from app.services.experiments import (
    FIGURES,
    ExperimentOutcome,
    run_experiment,
    run_figure,
    run_gap,
    run_point,
    run_roc,
    run_sweep,
)
from app.services.notifier import notify
from app.settings import configure_logging

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON experiment config (default: built-in setup)")
    common.add_argument("--seed", type=int, help="Override the master seed")
    common.add_argument("--trials", type=int, help="Override trials per hypothesis")
    common.add_argument("--out", help="Output CSV path")
    common.add_argument("--format", choices=["csv"], default="csv", help="Output format")
    common.add_argument("--workers", type=int, help="Thread pool width for trial chunks")

    parser = argparse.ArgumentParser(
        prog="uwpla", description="Position-based authentication experiments for acoustic networks"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="Run whatever the config describes")
    sub.add_parser("analytic", parents=[common], help="Analytic FAR/MDR at the configured point")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo FAR/MDR at the configured point")
    sub.add_parser("roc", parents=[common], help="ROC curve over the configured threshold grid")
    sub.add_parser("sweep", parents=[common], help="Sweep the configured axis")
    fig = sub.add_parser("figure", parents=[common], help="Reproduce a figure recipe")
    fig.add_argument("figure_id", choices=FIGURES)
    sub.add_parser("gap", parents=[common], help="Linearization gap report along the sweep axis")
    return parser


def load_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if not overrides:
        return config
    # Re-validate so command-line values get the same diagnostics as file values.
    return validate_config({**config.model_dump(), **overrides})


def dispatch(args: argparse.Namespace) -> ExperimentOutcome:
    config = load_from_args(args)
    command = args.command
    out, workers = args.out, args.workers
    if command == "run":
        return run_experiment(config, out, workers)
    if command == "figure":
        return run_figure(config, args.figure_id, out, workers)
    if command == "analytic":
        return run_point(config, "analytic", out, workers)
    if command == "simulate":
        return run_point(config, "montecarlo", out, workers)
    if command == "roc":
        return run_roc(config, out, workers)
    if command == "sweep":
        return run_sweep(config, out, workers)
    if command == "gap":
        return run_gap(config, out, workers)
    raise ConfigError([("command", f"unknown command {command!r}")])


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        outcome = dispatch(args)
    except ConfigError as e:
        for loc, msg in e.problems:
            print(f"config error: {loc}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailureError, DomainError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO

    for line in outcome.summary:
        print(line)
    print(json.dumps({"files": outcome.files}, ensure_ascii=False))
    notify(f"uwpla {args.command} finished: {', '.join(outcome.files)}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
