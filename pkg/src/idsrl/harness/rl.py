"""Single (policy, seed) reinforcement-learning run."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from ..agent import AgentConfig, TrainSchedule, evaluate, make_agent
from ..envs import ContractViolation, TabularEnv, capped_policy_value, optimal_capped_value
from ..ids_policy import DecisionTrace, IdsConfig
from . import baselines

RL_POLICIES = (
    "ids-ratio",
    "ids-additive",
    "dqn-ids",
    "c51-ids",
    "bootstrapped-ts",
    "ucb-ensemble",
    "eps-greedy",
)

METRIC_COLUMNS = (
    "step",
    "episode",
    "train_loss_q",
    "train_loss_dist",
    "mean_sigma2",
    "mean_rho2",
    "eval_return_mean",
    "eval_return_min",
    "eval_return_max",
    "greedy_value",
)


class NumericalFailure(ArithmeticError):
    """A loss or value became non-finite during a run."""


@dataclass(frozen=True)
class BaselineConfig:
    eps: float = 0.1
    eps_heads: int = 1
    ucb_lambda: float = 1.0


def resolve_policy(name, agent_cfg: AgentConfig, ids_cfg: IdsConfig, base: BaselineConfig):
    """Map a policy name to (agent config, IDS config or None, rule name)."""
    if name not in RL_POLICIES:
        raise ContractViolation(f"unknown RL policy {name!r}")
    replace = dataclasses.replace
    if name == "c51-ids":
        return replace(agent_cfg, dist="c51"), replace(ids_cfg, mode="ratio", homoscedastic_rho2=None), "ids"
    if name == "dqn-ids":
        rho2 = ids_cfg.homoscedastic_rho2 or 1.0
        return replace(agent_cfg, dist="none"), replace(ids_cfg, mode="ratio", homoscedastic_rho2=rho2), "ids"
    if name == "ids-ratio":
        return agent_cfg, replace(ids_cfg, mode="ratio"), "ids"
    if name == "ids-additive":
        return agent_cfg, replace(ids_cfg, mode="additive"), "ids"
    if name == "eps-greedy":
        return replace(agent_cfg, dist="none", n_heads=base.eps_heads), None, "eps"
    if name == "bootstrapped-ts":
        return replace(agent_cfg, dist="none"), None, "ts"
    return replace(agent_cfg, dist="none"), None, "ucb"


@dataclass
class RunResult:
    rows: list
    steps_to_threshold: int | None
    final_eval_return: float
    wall_seconds: float
    optimal_value: float


def run_rl(
    env: TabularEnv,
    policy: str,
    seed: int,
    agent_cfg: AgentConfig,
    ids_cfg: IdsConfig,
    schedule: TrainSchedule,
    baseline: BaselineConfig = BaselineConfig(),
    threshold: float = 0.95,
    stop_at_threshold: bool = False,
    trace_path=None,
) -> RunResult:
    """Train one agent and log a metrics row every ``eval_interval`` steps.

    ``greedy_value`` is the exact expected undiscounted return of the current
    evaluation policy; ``steps_to_threshold`` is the first logged step where
    it reaches ``threshold`` times the optimal value.
    """
    t0 = time.perf_counter()
    agent_cfg, ids_run, rule = resolve_policy(policy, agent_cfg, ids_cfg, baseline)
    schedule.validate(agent_cfg.batch_size)
    init_ss, env_ss, train_ss, act_ss, eval_ss = np.random.SeedSequence(seed).spawn(5)
    agent = make_agent(env, agent_cfg, init_ss)
    env_rng = np.random.default_rng(env_ss)
    train_rng = np.random.default_rng(train_ss)
    act_rng = np.random.default_rng(act_ss)
    eval_rng = np.random.default_rng(eval_ss)
    optimal, _ = optimal_capped_value(env)
    goal = threshold * optimal if optimal > 0 else optimal

    trace = DecisionTrace(trace_path, env.action_count) if trace_path and rule == "ids" else None
    rows = []
    hit = None
    episode = 0
    ep_len = 0
    head = int(act_rng.integers(agent_cfg.n_heads))
    s = env.reset()
    acc_q, acc_d, n_train = 0.0, 0.0, 0
    acc_s2, acc_r2, n_dec = 0.0, 0.0, 0
    try:
        for step in range(1, schedule.total_steps + 1):
            if step <= schedule.learning_starts:
                a = int(act_rng.integers(env.action_count))
            elif rule == "ids":
                a = agent.act(s, ids_run, "train", act_rng)
                dec = agent.last_decision
                acc_s2 += float(dec.sigma2.mean())
                acc_r2 += float(dec.rho2.mean())
                n_dec += 1
                if trace is not None:
                    trace.write(step, s, dec)
            elif rule == "eps":
                a = baselines.eps_greedy(agent, s, baseline.eps, act_rng)
            elif rule == "ts":
                a = baselines.ts_head_sample(agent, s, head)
            else:
                a = baselines.ucb_ensemble(agent, s, baseline.ucb_lambda)

            tr = env.step(s, a, env_rng)
            agent.buffer.add(tr)
            ep_len += 1
            if tr.terminal or ep_len >= env.horizon_cap:
                s = env.reset()
                ep_len = 0
                episode += 1
                head = int(act_rng.integers(agent_cfg.n_heads))
            else:
                s = tr.next_state

            if step >= schedule.learning_starts and step % schedule.train_frequency == 0:
                m = agent.train_step(train_rng)
                if not (np.isfinite(m.loss_q) and np.isfinite(m.loss_dist)):
                    raise NumericalFailure(f"{policy} seed {seed}: non-finite loss at step {step}")
                acc_q += m.loss_q
                acc_d += m.loss_dist
                n_train += 1
            if step >= schedule.learning_starts and step % schedule.target_sync_interval == 0:
                agent.network.sync_target()

            if step % schedule.eval_interval == 0:
                e_mean, e_min, e_max = evaluate(agent, env, schedule.eval_length, eval_rng)
                value = capped_policy_value(env, agent.greedy_actions())
                rows.append(
                    dict(
                        step=step,
                        episode=episode,
                        train_loss_q=acc_q / n_train if n_train else 0.0,
                        train_loss_dist=acc_d / n_train if n_train else 0.0,
                        mean_sigma2=acc_s2 / n_dec if n_dec else 0.0,
                        mean_rho2=acc_r2 / n_dec if n_dec else 0.0,
                        eval_return_mean=e_mean,
                        eval_return_min=e_min,
                        eval_return_max=e_max,
                        greedy_value=value,
                    )
                )
                acc_q = acc_d = acc_s2 = acc_r2 = 0.0
                n_train = n_dec = 0
                if hit is None and value >= goal - 1e-12:
                    hit = step
                    if stop_at_threshold:
                        break
    finally:
        if trace is not None:
            trace.close()
    final = rows[-1]["eval_return_mean"] if rows else float("nan")
    return RunResult(rows, hit, final, time.perf_counter() - t0, optimal)
