"""Command line entry point ``monoscale``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import KINDS, ConfigError, ExperimentConfig
from .homogenized import CacheFormatError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_INPUT = 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, help="worker threads for cell solves (default: $MONOSCALE_THREADS or 1)")
    p.add_argument("--cache", help="CSV file of memoized b values, imported before and exported after the run")
    p.add_argument(
        "--epsilon",
        action="append",
        help="period to use instead of the configured sweep; repeat for several, e.g. --epsilon 1/8 --epsilon 1/16",
    )
    p.add_argument("--seed", type=int, help="override the sampling seed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monoscale", description="Periodic homogenization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run the experiment named by the config's 'kind'"))
    for kind in KINDS:
        _add_common(sub.add_parser(kind, help=f"run a '{kind}' experiment (overrides the config's kind)"))
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a JSON object")
    if args.command != "run":
        data["kind"] = args.command
    if args.out:
        data["output_dir"] = args.out
    if args.seed is not None:
        data["seed"] = args.seed
    if args.epsilon:
        data["epsilons"] = list(args.epsilon)
    threads = args.threads
    if threads is None and os.environ.get("MONOSCALE_THREADS"):
        try:
            threads = int(os.environ["MONOSCALE_THREADS"])
        except ValueError:
            raise ConfigError("MONOSCALE_THREADS", "must be an integer") from None
    if threads is not None:
        data["threads"] = threads
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT

    from .harness import run_experiment

    try:
        report = run_experiment(cfg, cache_path=args.cache)
    except CacheFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    for name, ok in report.criteria.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"{cfg.kind}: {'PASS' if report.passed else 'FAIL'} ({len(report.rows)} rows) -> {cfg.output_dir}")
    return EXIT_OK if report.passed else EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
