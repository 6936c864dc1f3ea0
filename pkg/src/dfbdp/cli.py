"""Command line entry point: ``dfbdp solve`` and ``dfbdp validate``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config, render_config, with_overrides
from .errors import ConfigError
from .experiment import EXIT_CONFIG, EXIT_OK, print_summary, run_experiment
from .metrics import summary_row


def build_parser():
    p = argparse.ArgumentParser(prog="dfbdp", description="Deep backward solver for PIDEs with jumps")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-step losses")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run the experiment described by a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, help="override [train] seed")
    s.add_argument("--workers", type=int, default=1, help="max worker processes (default 1)")
    s.add_argument("--out", help="override [output] dir")
    v = sub.add_parser("validate", help="parse a config file and print it with defaults")
    v.add_argument("--config", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        sys.stdout.write(render_config(config))
        return EXIT_OK
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    config = with_overrides(config, seed=args.seed, out_dir=args.out)
    status, result = run_experiment(config, workers=args.workers,
                                    log=lambda msg: print(msg, file=sys.stderr))
    if status == EXIT_OK:
        grid = config.grid()
        row = summary_row(config.benchmark, config.problem().dim, grid.n, config.train.batch,
                          result)
        print_summary([row], file=sys.stdout)
    return status


if __name__ == "__main__":
    sys.exit(main())
