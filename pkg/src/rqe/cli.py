"""Command-line entry point: ``rqe <subcommand> [--config PATH] [--out DIR] [--seeds 0,1] [--threads N]``.

Exit codes: 0 on success, 1 for configuration or input errors, 2 for
runtime failures.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError, RQEError
from .experiments import KINDS, SummaryInputError, load_config, resolve_out, run_experiment, summarize

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be non-negative and non-empty")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rqe", description="Risk-averse quantal response equilibrium experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="YAML config file (a manifest.json also works)")
        p.add_argument("--out", help="output directory (overrides $RQE_OUT_DIR and the config)")
        p.add_argument("--seeds", type=_seeds, help="comma-separated seeds, e.g. 0,1,2")
        p.add_argument("--threads", type=int, default=1, help="parallel seed workers")
    p = sub.add_parser("summarize", help="summarize trajectory CSV files")
    p.add_argument("files", nargs="+", help="trajectory CSV files")
    p.add_argument("--out", default="summary.csv", help="summary CSV path")
    p.add_argument("--metric", help="column to summarize (default: detected from the header)")
    p.add_argument("--window", type=int, default=100, help="moving-average window")
    p.add_argument("--plot", help="also write a gnuplot script to this path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command == "summarize":
        if args.window < 1:
            print("error: --window must be positive", file=sys.stderr)
            return EXIT_CONFIG
        try:
            rows = summarize(args.files, args.out, args.metric, args.window, args.plot)
        except (OSError, SummaryInputError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for r in rows:
            flag = " (window clipped)" if r["window_clipped"] else ""
            print(f"{r['file']}: final {r['metric']} = {r['final']:.6g}, "
                  f"MA{r['window']} = {r['moving_average']:.6g}{flag}")
        print(f"wrote {args.out}")
        return EXIT_OK

    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, kind=args.command, overrides={"seeds": args.seeds})
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.out = str(resolve_out(cfg.out, args.out))
    try:
        rows = run_experiment(cfg, threads=args.threads)
    except (RQEError, ArithmeticError, ValueError, OSError) as exc:
        print(f"runtime failure: {exc} (partial outputs in {cfg.out})", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{len(rows)} result row(s) written to {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
