"""Argument parsing, configuration loading, and suite dispatch."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import config_hash, load_config, with_overrides
from .exceptions import CheckFailed, ConfigError, LabError
from .logging_config import configure_logging
from .runner import ALL, SUITES, ExperimentRunner

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mv-maxprinciple",
        description="Verification suites for the maximum principle of mean-field control problems",
    )
    parser.add_argument(
        "subcommand",
        choices=[*SUITES, ALL],
        help="Suite to run; 'all' runs every suite cheapest-first",
    )
    parser.add_argument(
        "config_path",
        nargs="?",
        metavar="CONFIG",
        help="Path to the JSON/YAML experiment configuration",
    )
    parser.add_argument(
        "-c", "--config",
        dest="config_option",
        help="Path to the JSON/YAML experiment configuration",
    )
    parser.add_argument(
        "--workers",
        type=int,
        help="Cap on parallel width; results do not depend on it",
    )
    parser.add_argument(
        "--out",
        help="Output directory for report.json and the CSV files",
    )
    parser.add_argument(
        "--seed-override",
        type=int,
        help="Replace simulation.seed",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    path = args.config_option or args.config_path
    if path is None:
        print("Configuration error: a config path is required (positional or --config)", file=sys.stderr)
        return EXIT_USAGE

    # Load config (minimal logging until config is loaded)
    try:
        config = with_overrides(
            load_config(path), seed=args.seed_override, out=args.out, workers=args.workers
        )
    except ConfigError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(config.logging, config_hash(config), config.simulation.seed)

    try:
        ExperimentRunner(config).run(args.subcommand)
    except CheckFailed as exc:
        logger.error("Failing checks: %s", ", ".join(exc.failing))
        return EXIT_FAILED
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_USAGE
    except LabError as exc:
        logger.error("Fatal error: %s", exc)
        return EXIT_FAILED
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_FAILED

    return EXIT_OK
