"""Command line entry point.

Exit codes: 0 on success, 2 on configuration errors, 3 when more than 10%
of the repetitions had to be excluded for degenerate weights.
"""

from __future__ import annotations

import argparse
import sys

from .experiment import emit_results, run_experiment
from .scenarios import ConfigError, load_config

_DEGENERATE_LIMIT = 0.10


def _add_run_parser(sub, kind: str, help_text: str) -> None:
    p = sub.add_parser(kind, help=help_text)
    p.add_argument("--config", required=True, help="path to a scenario JSON file")
    p.add_argument("--out", required=True, help="directory for result files")
    p.add_argument(
        "--seeds",
        default=None,
        help="comma separated seed list overriding the config (e.g. 7,8,9)",
    )
    p.add_argument(
        "--format",
        default="both",
        choices=("csv", "json", "both"),
        help="output format (default both)",
    )
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker processes (default: SEQCMC_THREADS or the CPU count)",
    )


def _parse_seeds(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma separated integers: {exc}") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="seqcmc",
        description="sequential Monte Carlo benchmarks with conditional estimators",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub, "single", "single-object filtering benchmark")
    _add_run_parser(sub, "jmss", "jump Markov state-space benchmark")
    _add_run_parser(sub, "phd", "multi-object PHD benchmark")
    v = sub.add_parser("validate", help="check a config file and exit")
    v.add_argument("--config", required=True)

    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"ok: {cfg.kind} scenario {cfg.name!r}, {cfg.repetitions} repetitions")
            return 0
        if cfg.kind != args.command:
            raise ConfigError(
                f"config is a {cfg.kind!r} scenario, invoked as {args.command!r}"
            )
        seeds = _parse_seeds(args.seeds) if args.seeds else None
        if seeds is not None and not seeds:
            raise ConfigError("--seeds produced an empty list")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    result = run_experiment(cfg, seeds=seeds, workers=args.workers)
    formats = ("csv", "json") if args.format == "both" else (args.format,)
    written = emit_results(result, args.out, formats)
    for path in written:
        print(path)
    if result.n_degenerate:
        print(
            f"warning: excluded {result.n_degenerate}/{result.n_seeds} "
            "degenerate repetitions",
            file=sys.stderr,
        )
    if result.degenerate_fraction > _DEGENERATE_LIMIT:
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
