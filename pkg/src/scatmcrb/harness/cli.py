"""Command-line entry point: ``scatmcrb <subcommand> [--config PATH] ...``."""

import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys

from ..errors import ConfigError, ScatMcrbError
from .config import PRESETS, parse_config
from . import experiments

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

COMMANDS = {
    "forward": experiments.run_forward,
    "ptp": experiments.run_ptp_and_bounds,
    "montecarlo": experiments.run_monte_carlo,
    "qimage": experiments.run_qimage,
    "compare-models": experiments.run_compare_models,
}

log = logging.getLogger("scatmcrb")


class _Parser(argparse.ArgumentParser):
    """Usage errors count as configuration errors (exit 1), not numerical ones."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(
        prog="scatmcrb",
        description="Misspecified bounds for scatterer localization: simulate, fit, and sweep.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="store_true", help="log written files")
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--preset", choices=sorted(PRESETS), help="defaults preset")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
    return parser


def load_config(args):
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    cfg = parse_config(text, preset=args.preset)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, _ = COMMANDS[args.command](cfg, args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScatMcrbError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in report.files:
        log.info("wrote %s", path)
    if report.numerical_failure:
        print(f"numerical failure: {report.n_failed} of {report.n_tasks} tasks failed"
              + (f" ({report.fatal})" if report.fatal else ""), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
