"""Command-line driver: ``probeddy <stage> [--config FILE] [--seed N] [--workers N] [--out DIR]``.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .errors import ConfigurationError, InvalidParameterError
from .experiment import FIGURE_IDS, ExperimentConfig, Experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
COMMANDS = ("calibrate", "simulate", "assimilate", "sample", "diagnose", "track", "stats", "figures", "all")


def build_parser():
    p = argparse.ArgumentParser(prog="probeddy", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file (keys carry units, e.g. obs_noise_km)")
    p.add_argument("--preset", choices=("default", "desk"), default="default",
                   help="base configuration when --config is not given")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--workers", type=int, default=1, help="process count; never changes results")
    p.add_argument("--out", default="probeddy_run", help="output directory")
    p.add_argument("--figure", action="append", choices=FIGURE_IDS,
                   help="figure id for 'figures' (repeatable; default all)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else (
        ExperimentConfig.desk() if args.preset == "desk" else ExperimentConfig())
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        exp = Experiment(cfg, args.out, args.workers)
    except (ConfigurationError, InvalidParameterError, ValueError) as exc:
        print(f"probeddy: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "all":
            exp.run_all()
        elif args.command == "figures":
            exp.figures(tuple(args.figure) if args.figure else FIGURE_IDS)
        else:
            getattr(exp, args.command)()
    except (ConfigurationError, InvalidParameterError) as exc:
        print(f"probeddy: {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # reported, recorded in the manifest, mapped to exit code 2
        print(f"probeddy: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"probeddy: {args.command} done -> {exp.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
