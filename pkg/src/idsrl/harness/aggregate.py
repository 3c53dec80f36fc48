"""Reduce per-run CSVs to per-policy mean/min/max curves."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .csvio import CsvFormatError, read_csv, write_csv
from .svg import Series, line_chart

AGGREGATE_SCHEMA = "aggregate/v1"
AGGREGATE_COLUMNS = ("policy", "metric", "step", "n_runs", "mean", "min", "max")

# metric plotted by default for each run schema
DEFAULT_METRIC = {"rl_metrics/v1": "eval_return_mean", "bandit_steps/v1": "cumulative_regret"}


def aggregate_runs(paths, metric=None):
    """Aggregate run CSVs that share a schema and column layout.

    The run's policy is read from the ``policy`` column when present and from
    the file name (``<policy>__seed<k>.csv``) otherwise. Returns a list of
    aggregate rows ordered by policy (first appearance) then step.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise CsvFormatError("no run CSVs given")
    schema = columns = None
    curves = defaultdict(lambda: defaultdict(list))
    for p in paths:
        sch, cols, rows = read_csv(p)
        if schema is None:
            schema, columns = sch, cols
            metric = metric or DEFAULT_METRIC.get(sch)
            if metric is None or metric not in cols:
                raise CsvFormatError(f"{p}: metric {metric!r} not among columns")
        elif sch != schema or cols != columns:
            raise CsvFormatError(f"{p}: columns differ from {paths[0]}")
        fallback = p.stem.split("__")[0]
        for lineno, row in enumerate(rows, start=3):
            policy = row.get("policy", fallback)
            try:
                curves[policy][int(row["step"])].append(float(row[metric]))
            except ValueError:
                raise CsvFormatError(f"{p}:{lineno}: non-numeric step or {metric!r}") from None
    out = []
    for policy, by_step in curves.items():
        for step in sorted(by_step):
            vals = np.asarray(by_step[step])
            out.append(
                dict(
                    policy=policy,
                    metric=metric,
                    step=step,
                    n_runs=len(vals),
                    mean=float(vals.mean()),
                    min=float(vals.min()),
                    max=float(vals.max()),
                )
            )
    return out


def aggregate_and_plot(paths, out_dir, metric=None, title=""):
    """Write ``aggregate.csv`` and ``aggregate.svg`` into ``out_dir``."""
    rows = aggregate_runs(paths, metric)
    out_dir = Path(out_dir)
    csv_path = write_csv(out_dir / "aggregate.csv", AGGREGATE_SCHEMA, AGGREGATE_COLUMNS, rows)
    series = []
    for policy in dict.fromkeys(r["policy"] for r in rows):
        sel = [r for r in rows if r["policy"] == policy]
        series.append(
            Series(
                policy,
                np.array([r["step"] for r in sel], float),
                np.array([r["mean"] for r in sel]),
                np.array([r["min"] for r in sel]),
                np.array([r["max"] for r in sel]),
            )
        )
    svg_path = out_dir / "aggregate.svg"
    svg_path.write_text(line_chart(series, title=title, xlabel="step", ylabel=rows[0]["metric"]))
    return rows, csv_path, svg_path
