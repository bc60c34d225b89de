"""Command line entry point.

Typical usage:

    python3 -m quasiergodic classify --system lorenz --seed 1,1,1 --output runs/lorenz
    python3 -m quasiergodic partition --system torus_flow --alpha 0.618 --seeds random:10 --h 0.02
    python3 -m quasiergodic averages --config experiment_settings.json
    python3 -m quasiergodic reproduce all --output runs/acceptance

Every run writes ``report.json`` plus its artifacts below the output directory.
Exit status is 0 on success, 2 for configuration errors and 3 when a numerical
step failed (the report is still written and marked partial).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from quasiergodic import experiments
from quasiergodic.configuration import ExperimentConfig, load_config
from quasiergodic.errors import ConfigError, QuasiergodicError
from quasiergodic.reports import read_json

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMAND_HELP = {
    "classify": "fixed point, cycle or non-trivial closure, with sensitivity and coherence",
    "partition": "closure partition of a set of seeds",
    "averages": "kinecentric field and time versus space averages",
    "invariants": "invariant certificates and level-set manifolds against closures",
    "regularity": "immanence, comanence and accompanying-radius tables",
    "sensitivity": "late-time separation scan over an eps grid",
}


def _parse_point(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seed must be comma separated numbers, got '{text}'") from exc


def _parse_param(text: str) -> tuple[str, float | int]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"parameter must look like name=value, got '{text}'")
    try:
        # integer literals stay integers (dimension=3)
        return key, int(value) if value.strip().lstrip("+-").isdigit() else float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"parameter {key} needs a number, got '{value}'") from exc


def _parse_sampler(text: str) -> int:
    kind, _, count = text.partition(":")
    if kind != "random" or not count.isdigit() or int(count) < 1:
        raise argparse.ArgumentTypeError(f"--seeds expects random:N, got '{text}'")
    return int(count)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment file; flags below override its sections")
    parser.add_argument("--system", help="registered system name, e.g. harmonic_oscillator or lorenz")
    parser.add_argument("--param", action="append", type=_parse_param, default=[], metavar="NAME=VALUE",
                        help="system parameter (repeatable)")
    parser.add_argument("--alpha", type=float, help="shorthand for --param alpha=VALUE")
    parser.add_argument("--seed", action="append", type=_parse_point, default=[], metavar="X1,X2,...",
                        help="explicit seed state (repeatable)")
    parser.add_argument("--seeds", type=_parse_sampler, metavar="random:N", help="draw N uniform seeds")
    parser.add_argument("--rng-seed", type=int, help="seed of the random generator (default 0 with --seeds)")
    parser.add_argument("--burn-in", type=float, help="settle every seed for this long first")
    parser.add_argument("--h", type=float, help="grid resolution")
    parser.add_argument("--horizon", type=float, action="append", default=[],
                        help="horizon schedule entry (repeatable, increasing)")
    parser.add_argument("--output", help="output directory")


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    params = dict(args.param)
    if args.alpha is not None:
        params["alpha"] = args.alpha
    if args.system or params:
        overrides["system"] = {}
        if args.system:
            overrides["system"]["name"] = args.system
        if params:
            overrides["system"]["params"] = params
    seeds: dict[str, Any] = {}
    if args.seed:
        seeds.update(points=args.seed, sampler=None)
    elif args.seeds:
        seeds.update(points=None, sampler="uniform", count=args.seeds, rng_seed=0)
    if args.rng_seed is not None:
        seeds["rng_seed"] = args.rng_seed
    if args.burn_in is not None:
        seeds["burn_in"] = args.burn_in
    if seeds:
        overrides["seeds"] = seeds
    if args.h is not None:
        overrides["grid"] = {"h": args.h}
    if args.horizon:
        overrides["horizons"] = {"schedule": args.horizon}
    if args.output:
        overrides["output"] = {"directory": args.output}
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quasiergodic", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in experiments.COMMANDS:
        _add_common(commands.add_parser(name, help=COMMAND_HELP[name]))
    reproduce = commands.add_parser("reproduce", help="run numbered acceptance experiments")
    reproduce.add_argument("criterion", help=f"criterion number ({min(experiments.CRITERIA)}-{max(experiments.CRITERIA)}) or 'all'")
    reproduce.add_argument("--output", default="acceptance", help="output directory (default: ./acceptance)")
    reproduce.add_argument("--quick", action="store_true", help="shorter horizons and fewer samples")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _reproduce(args: argparse.Namespace) -> int:
    out = Path(args.output).expanduser()
    if args.criterion == "all":
        outcome = experiments.run_all(out, args.quick)
    else:
        try:
            criterion = int(args.criterion)
        except ValueError as exc:
            raise ConfigError(f"criterion must be a number or 'all', got '{args.criterion}'") from exc
        path = experiments.run_criterion(criterion, out, args.quick)
        outcome = {criterion: bool(read_json(path)["results"]["passed"])}
    for criterion, passed in sorted(outcome.items()):
        print(f"criterion {criterion:2d}: {'pass' if passed else 'FAIL'}")
    return EXIT_OK if all(outcome.values()) else EXIT_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        if args.command == "reproduce":
            return _reproduce(args)
        config: ExperimentConfig = load_config(args.config, _overrides(args))
        out = config.output_directory()
        report = experiments.COMMANDS[args.command](config, out)
        path = report.write(out)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except QuasiergodicError as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_NUMERICAL
    print(f"Wrote {path}")
    if report.partial:
        log.error("%s: %d step(s) failed, report marked partial", args.command, len(report.failures))
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
