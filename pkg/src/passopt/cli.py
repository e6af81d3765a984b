"""Command line entry point: ``passopt {run,sweep,compare}``.

Exit codes: 0 success, 2 configuration error, 3 no feasible solution in any
row.
"""

import argparse
import logging
import os
import sys

from .harness import (
    ALGORITHMS,
    ConfigError,
    ExperimentSpec,
    emit_results,
    load_config,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    name = os.environ.get("PASSOPT_LOG", "error").strip().lower()
    if name not in _LEVELS:
        raise ConfigError(f"PASSOPT_LOG must be one of {', '.join(_LEVELS)}, got {name!r}")
    logging.basicConfig(level=_LEVELS[name], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--algo", action="append", choices=ALGORITHMS,
                        help="solver (repeat with compare)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--trials", type=int, help="trials per point")
    common.add_argument("--workers", type=int, help="worker processes")

    p = argparse.ArgumentParser(prog="passopt", description="Pinching-antenna transmit power optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single point (sweep axes ignored)")
    sub.add_parser("sweep", parents=[common], help="every point of the configured sweep")
    sub.add_parser("compare", parents=[common], help="several solvers on identical seeds, paired rows")
    return p


def spec_from_args(args) -> ExperimentSpec:
    kw = load_config(args.config) if args.config else {}
    if args.algo:
        kw["algos"] = tuple(args.algo)
    for name in ("seed", "out", "format", "trials", "workers"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    if args.command == "run":
        kw["sweep"] = {}
    if args.command == "compare" and len(kw.get("algos", ())) < 2:
        if args.algo:
            raise ConfigError("compare needs at least two --algo values")
        kw["algos"] = ("psozf", "mmpdd")
    if args.command != "compare" and len(kw.get("algos", ("psozf",))) > 1 and args.algo:
        raise ConfigError(f"{args.command} takes a single --algo; use compare for several")
    try:
        return ExperimentSpec(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        spec = spec_from_args(args)
    except ConfigError as e:
        print(f"passopt: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    rows = run_experiment(spec)
    try:
        text = emit_results(rows, spec.format, spec.out)
    except OSError as e:
        print(f"passopt: {e}", file=sys.stderr)
        return 1
    if spec.out is None:
        sys.stdout.write(text)
    if rows and not any(r.feasible for r in rows):
        print("passopt: no feasible solution in any row", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
