"""Command line entry point: one subcommand per stage plus `run` for the full pipeline."""

import argparse
import logging
import os
import sys

from .config import load_config
from .errors import PredbiasError
from .pipeline import STAGES, run, run_stage

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("PREDBIAS_LOG_LEVEL", "error").lower()
    if level not in _LOG_LEVELS:
        level = "error"
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def _add_common(parser):
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--out", required=True, help="output directory for all artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="predbias",
        description="Detect biased predicate annotations and transfer them to "
        "informative labels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="run every stage in order")
    _add_common(run_parser)
    run_parser.add_argument(
        "--stage", choices=sorted(STAGES), default=None, help="run a single stage instead"
    )
    for name in STAGES:
        stage_parser = sub.add_parser(name, help=f"run only the {name} stage")
        _add_common(stage_parser)
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "run" and getattr(args, "stage", None) is None:
            run(cfg, args.out)
        else:
            stage = args.stage if args.command == "run" else args.command
            run_stage(stage, cfg, args.out)
    except PredbiasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
