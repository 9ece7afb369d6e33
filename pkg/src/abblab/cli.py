"""Command line entry point: ``abblab <kind> --config FILE [--out DIR] [--seed N] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, load_config
from .errors import AbbError
from .experiments import run_experiment


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abblab", description="Run one experiment from a config file.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="sectioned key-value config file")
    ap.add_argument("--out", default=None, help="output directory (default from config or ./runs)")
    ap.add_argument("--seed", type=int, default=None, help="override [mc] seed")
    ap.add_argument("--threads", type=int, default=None, help="Monte Carlo worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, kind=args.kind)
        if args.seed is not None:
            cfg.mc["seed"] = args.seed
        summary = run_experiment(cfg, args.out, threads=args.threads)
    except AbbError as exc:
        print(f"abblab: error: {exc}", file=sys.stderr)
        return 2
    status = "PASS" if summary["passed"] else "FAIL"
    print(f"{cfg.kind}: {status} in {summary['wall_time_s']:.1f}s -> {args.out or cfg.out_dir}")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
