"""Execute every (policy, seed) pair of an experiment and write its artifacts.

Layout under the output directory::

    runs/<policy>__seed<k>.csv     per-run metrics (bandit: per step)
    traces/<policy>__seed<k>.csv   per-step IDS decisions (with --trace)
    summary.csv                    one row per run, deterministic
    timing.csv                     wall-clock seconds per run
    aggregate.csv, aggregate.svg   per-policy mean with min/max band
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..envs import true_q
from ..gp_bandit import run_bandit
from .aggregate import aggregate_and_plot
from .config import ExperimentConfig
from .csvio import write_csv
from .rl import METRIC_COLUMNS, run_rl
from .td_probe import PROBE_COLUMNS, td_noise_probe, uniform_policy

RL_SCHEMA = "rl_metrics/v1"
BANDIT_SCHEMA = "bandit_steps/v1"
BANDIT_COLUMNS = ("step", "policy", "chosen_x", "reward", "instantaneous_regret", "cumulative_regret")
BANDIT_TRACE_COLUMNS = ("step", "index", "lower", "upper", "regret_estimate", "info_gain", "ratio", "chosen")
PROBE_SCHEMA = "td_probe/v1"
SUMMARY_SCHEMA = "run_summary/v1"
SUMMARY_COLUMNS = ("policy", "seed", "final_eval_return", "cumulative_regret", "steps_to_threshold", "reached")
TIMING_COLUMNS = ("policy", "seed", "wall_seconds")


@dataclass(frozen=True)
class RunSummary:
    """Outcome of one run.

    ``steps_to_threshold`` is censored at the run length when the threshold
    is never reached (``reached`` is then false), so every field is finite.
    For RL runs ``cumulative_regret`` is the area between the optimal and the
    evaluated greedy value, summed over evaluation windows.
    """

    policy: str
    seed: int
    final_eval_return: float
    cumulative_regret: float
    steps_to_threshold: int
    reached: bool
    wall_seconds: float


def run_file(out_dir, policy, seed, folder="runs"):
    return Path(out_dir) / folder / f"{policy}__seed{seed}.csv"


def _run_rl_pair(cfg: ExperimentConfig, policy, seed, trace):
    env = cfg.build_env()
    trace_path = None
    if trace:
        trace_path = run_file(cfg.out, policy, seed, "traces")
        trace_path.parent.mkdir(parents=True, exist_ok=True)
    res = run_rl(env, policy, seed, cfg.agent, cfg.ids, cfg.schedule, cfg.baseline,
                 threshold=cfg.threshold, stop_at_threshold=cfg.stop_at_threshold, trace_path=trace_path)
    write_csv(run_file(cfg.out, policy, seed), RL_SCHEMA, METRIC_COLUMNS, res.rows)
    interval = cfg.schedule.eval_interval
    regret = sum((res.optimal_value - r["greedy_value"]) * interval for r in res.rows)
    last_step = res.rows[-1]["step"] if res.rows else cfg.schedule.total_steps
    return RunSummary(
        policy,
        seed,
        res.final_eval_return,
        float(regret),
        res.steps_to_threshold if res.steps_to_threshold is not None else last_step,
        res.steps_to_threshold is not None,
        res.wall_seconds,
    )


def _run_bandit_pair(cfg: ExperimentConfig, policy, seed, trace):
    t0 = time.perf_counter()
    trace_rows = []

    def record(t, dec):
        for i in range(len(dec.ratio)):
            trace_rows.append(dict(step=t, index=i, lower=float(dec.lower[i]), upper=float(dec.upper[i]),
                                   regret_estimate=float(dec.regret_estimate[i]), info_gain=float(dec.info_gain[i]),
                                   ratio=float(dec.ratio[i]), chosen=i == dec.action_index))

    rows = run_bandit(policy, seed, cfg.bandit, trace=record if trace else None)
    write_csv(run_file(cfg.out, policy, seed), BANDIT_SCHEMA, BANDIT_COLUMNS, rows)
    if trace and trace_rows:
        write_csv(run_file(cfg.out, policy, seed, "traces"), "bandit_trace/v1", BANDIT_TRACE_COLUMNS, trace_rows)
    prob = cfg.bandit.problem
    best = float(prob.target(np.linspace(prob.low, prob.high, cfg.bandit.grid_size)).max())
    hit = next((r["step"] + 1 for r in rows if r["instantaneous_regret"] == 0.0), None)
    return RunSummary(
        policy,
        seed,
        best - rows[-1]["instantaneous_regret"],
        rows[-1]["cumulative_regret"],
        hit if hit is not None else len(rows),
        hit is not None,
        time.perf_counter() - t0,
    )


def _probe_policy(env, name, temperature):
    if name == "uniform":
        return uniform_policy(env)
    q = true_q(env)
    z = q / temperature
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _run_probe_pair(cfg: ExperimentConfig, policy, seed, trace):
    t0 = time.perf_counter()
    env = cfg.build_env()
    pi = _probe_policy(env, policy, cfg.probe.temperature)
    res = td_noise_probe(env, pi, cfg.probe.samples_per_sa, np.random.default_rng(seed))
    sep = res.separated()
    rows = [dict(r, separated=bool(sep[r["state"], r["action"]])) for r in res.rows()]
    write_csv(run_file(cfg.out, policy, seed, "probe"), PROBE_SCHEMA, PROBE_COLUMNS + ("separated",), rows)
    return RunSummary(policy, seed, 0.0, 0.0, 0, bool(sep.any()), time.perf_counter() - t0)


_RUNNERS = {"rl": _run_rl_pair, "gp-bandit": _run_bandit_pair, "td-probe": _run_probe_pair}


def _execute(args):
    cfg, policy, seed, trace = args
    return _RUNNERS[cfg.kind](cfg, policy, seed, trace)


def run_experiment(cfg: ExperimentConfig, threads=1, trace=False):
    """Run all pairs (in a process pool when ``threads > 1``) and write artifacts.

    Results are ordered by (policy, seed) as listed in the config regardless
    of completion order, so every CSV except ``timing.csv`` is a pure
    function of the config.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, p, s, trace) for p in cfg.policies for s in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            summaries = list(pool.map(_execute, jobs))
    else:
        summaries = [_execute(j) for j in jobs]

    rows = [asdict(s) for s in summaries]
    write_csv(out / "summary.csv", SUMMARY_SCHEMA, SUMMARY_COLUMNS, rows)
    write_csv(out / "timing.csv", "run_timing/v1", TIMING_COLUMNS, rows)
    if cfg.kind != "td-probe":
        files = [run_file(out, p, s) for p in cfg.policies for s in cfg.seeds]
        title = "cumulative regret" if cfg.kind == "gp-bandit" else "evaluation return"
        aggregate_and_plot(files, out, title=title)
    return summaries
