"""``lab <experiment> --config <path> [--strict] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .harness import NumericalFailure, emit_plots, run

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description="Run a seeded Gibbs-measure experiment.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="sectioned key=value file; defaults are used when omitted")
    ap.add_argument("--strict", action="store_true", help="exit with status 1 if any verdict fails")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("--plots", action="store_true", help="also write plotting scripts")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig(args.experiment)
        if cfg.experiment != args.experiment:
            raise ConfigError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        cfg = cfg.with_overrides(seed=args.seed, out=args.out)
    except (OSError, ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        art = run(cfg)
    except NumericalFailure as e:
        where = f" (state dumped to {e.dump})" if e.dump else ""
        print(f"numerical failure: {e}{where}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        # parameters that parse but are mutually inconsistent (e.g. too few members)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.plots:
        emit_plots(art)
    for name, ok in art.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"outputs in {art.out_dir}")
    if args.strict and not art.passed:
        return EXIT_VERDICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
