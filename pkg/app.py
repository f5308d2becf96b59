# app.py

import argparse
import logging
import sys

from components.config_loader import load_experiment_config, parse_override
from components.constants import (
    EXIT_OK, EXIT_NUMERICAL_FAILURE, EXIT_CONFIG_ERROR, INVARIANT_FAILED_MESSAGE
)
from components.exceptions import ConfigError, RoughPricerError
from components.experiments import (
    PRICING_SCHEMES, REFERENCE_SCHEMES, run_convergence, run_experiment, run_path_study,
    run_price, run_reference, run_validation, write_reports
)

logger = logging.getLogger("roughbsde")

# subcommand -> (runner, schemes it accepts, scheme forced when the config names another)
COMMANDS = {
    "run": (run_experiment, None, None),
    "price": (run_price, PRICING_SCHEMES, "european"),
    "reference": (run_reference, REFERENCE_SCHEMES, "mc-reference"),
    "convergence": (run_convergence, ("convergence",), "convergence"),
    "path-study": (run_path_study, ("path-study",), "path-study"),
    "validate": (run_validation, None, None),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roughbsde",
        description="Deep BSDE pricing of European and American puts under rough Bergomi volatility.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("config", nargs="?", help="flat TOML experiment config")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--runs", type=int)
        sub.add_argument("--workers", type=int)
        sub.add_argument("--output-dir")
        sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override any config field (repeatable)")
        sub.add_argument("--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    overrides = dict(parse_override(item) for item in args.set)
    for key in ("seed", "runs", "workers", "output_dir"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return overrides


def run(argv=None) -> int:
    """Parses arguments, runs the experiment and writes its reports; returns the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s:%(message)s')
    runner, accepted, fallback = COMMANDS[args.command]

    try:
        overrides = _overrides(args)
        config = load_experiment_config(args.config, overrides)
        if accepted is not None and config.scheme not in accepted:
            if "scheme" in overrides:
                raise ConfigError([f"scheme: {args.command} accepts {', '.join(accepted)}, got {config.scheme!r}"])
            config.scheme = fallback
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG_ERROR

    try:
        report = runner(config)
    except RoughPricerError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL_FAILURE
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG_ERROR

    for path in write_reports(report, config):
        logger.info("Report: %s", path)
    if not report.ok:
        logger.error("%s\n%s", INVARIANT_FAILED_MESSAGE, "\n".join(report.failures))
        return EXIT_NUMERICAL_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
