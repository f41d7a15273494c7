"""Command line entry point: one subcommand per experiment, plus ``report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, default_config, parse_config, resolve_seed
from .runner import EXIT_ERROR, report, run

log = logging.getLogger("anderson_msa")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=default, help="YAML run configuration")
    p.add_argument("--seed", type=_u64, default=default, help="root seed (overrides config and ANDERSON_SEED)")
    p.add_argument("--workers", type=int, default=default, help="parallel trial workers")
    p.add_argument("--out", type=Path, default=default, help="output directory")
    p.add_argument("--emit-reports", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="also write per-trial predicate reports as JSON lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anderson-msa",
                                     description="Multi-scale analysis lab for multi-particle Anderson models")
    _add_globals(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        _add_globals(sub.add_parser(name, help=f"run the {name} experiment"), suppress=True)
    rp = sub.add_parser("report", help="summarize a results directory")
    rp.add_argument("results_dir", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "report":
        try:
            print(report(args.results_dir))
        except (FileNotFoundError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        return 0
    try:
        cfg = parse_config(args.config) if args.config else default_config(args.command)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_ERROR
    if cfg.experiment != args.command:
        print(f"error: config is for {cfg.experiment!r}, not {args.command!r}", file=sys.stderr)
        return EXIT_ERROR
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    seed = resolve_seed(args.seed, cfg)
    out = args.out or Path(cfg.output_dir or f"results/{cfg.experiment}")
    try:
        code, outcome = run(cfg, out, seed, args.workers, args.emit_reports)
    except (ValueError, RuntimeError, OSError) as exc:
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for v in outcome.violations:
        print(f"invariant violated: {v}", file=sys.stderr)
    print(report(out))
    return code


if __name__ == "__main__":
    sys.exit(main())
