"""``idsrl`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .aggregate import aggregate_and_plot
from .config import ConfigError, load_config
from .csvio import CsvFormatError
from .runner import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_KIND_FOR = {"bandit": "gp-bandit", "train": "rl", "probe-td-noise": "td-probe"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    parser = _Parser(prog="idsrl", description="Information-directed exploration experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("bandit", "GP bandit runs (gp-ucb, gp-ts, gp-ids)"),
        ("train", "reinforcement-learning runs on a tabular environment"),
        ("probe-td-noise", "empirical TD-target variance per state-action pair"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--trace", action="store_true", help="dump per-step IDS decisions")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
    p = sub.add_parser("aggregate", help="aggregate run CSVs into a mean/min/max curve and SVG")
    p.add_argument("runs", nargs="+", help="run CSV files or directories containing them")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metric", help="column to aggregate (default depends on the CSV schema)")
    return parser


def _print_summaries(summaries, out):
    by_policy = defaultdict(list)
    for s in summaries:
        by_policy[s.policy].append(s)
    print(f"{'policy':<16} {'runs':>4} {'reached':>7} {'mean_steps':>10} {'mean_regret':>12} {'mean_final':>10}")
    for policy, items in by_policy.items():
        print(
            f"{policy:<16} {len(items):>4} {sum(s.reached for s in items):>7} "
            f"{np.mean([s.steps_to_threshold for s in items]):>10.1f} "
            f"{np.mean([s.cumulative_regret for s in items]):>12.4f} "
            f"{np.mean([s.final_eval_return for s in items]):>10.4f}"
        )
    print(f"artifacts written to {out}")


def _collect(paths):
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.rglob("*.csv")) if p.is_dir() else [p])
    return files


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "aggregate":
            rows, csv_path, svg_path = aggregate_and_plot(_collect(args.runs), args.out, metric=args.metric)
            print(f"{len(rows)} aggregate rows -> {csv_path}, {svg_path}")
            return EXIT_OK
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config)
        if cfg.kind != _KIND_FOR[args.command]:
            raise ConfigError(f"{args.config}: kind {cfg.kind!r} does not match command {args.command!r}")
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out:
            cfg = cfg.with_out(args.out)
        summaries = run_experiment(cfg, threads=args.threads, trace=args.trace)
        _print_summaries(summaries, cfg.out)
        return EXIT_OK
    except (ConfigError, CsvFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
