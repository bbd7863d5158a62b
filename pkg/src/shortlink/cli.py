"""Command line entry point: ``shortlink run --config FILE --kind KIND``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, parse_config
from .experiments import KINDS, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shortlink",
                                description="Short-range mmWave link configuration experiments")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a Monte Carlo campaign")
    run.add_argument("--config", help="TOML scenario file (defaults when omitted)")
    run.add_argument("--kind", required=True, choices=KINDS)
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--trials", type=int, help="override the number of trials")
    run.add_argument("--threads", type=int, default=1, help="worker processes")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        over = {}
        if args.seed is not None:
            over["master_seed"] = args.seed
        if args.trials is not None:
            over["trials"] = args.trials
        if args.out is not None:
            over["output_dir"] = args.out
        cfg = cfg.with_overrides(**over)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        paths = run_experiment(cfg, args.kind, cfg.output_dir, args.threads)
    except (ConfigError, OSError) as exc:
        print(f"shortlink: error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
