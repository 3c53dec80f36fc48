"""Empirical TD-target noise per state-action pair.

For a fixed Q-table and behaviour policy the bootstrap target
``y = r + gamma * Q(s', a')`` with ``s' ~ P(.|s,a)`` and ``a' ~ pi(.|s')`` is a
random variable even when the environment is deterministic, because ``a'`` is.
The probe draws that target repeatedly and reports its spread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs import ContractViolation, TabularEnv, policy_q

PROBE_COLUMNS = ("state", "action", "samples", "mean", "variance", "stderr")


@dataclass(frozen=True)
class ProbeResult:
    mean: np.ndarray  # (S, A)
    variance: np.ndarray  # (S, A), unbiased
    stderr: np.ndarray  # (S, A), standard error of the variance estimate
    samples: int

    def separated(self, n_se=3.0):
        """Mask of pairs whose variance exceeds zero by more than ``n_se`` standard errors."""
        return self.variance > n_se * self.stderr

    def rows(self):
        s_count, a_count = self.mean.shape
        for s in range(s_count):
            for a in range(a_count):
                yield dict(
                    state=s,
                    action=a,
                    samples=self.samples,
                    mean=float(self.mean[s, a]),
                    variance=float(self.variance[s, a]),
                    stderr=float(self.stderr[s, a]),
                )


def four_state_mdp(gamma=0.9, slip=0.0):
    """Small episodic MDP for the probe.

    State 0 branches to state 1 (action 0) or state 2 (action 1). In state 1
    the two actions pay 1 and 0, in state 2 both pay 0.5; either way the
    episode then ends in the absorbing state 3. With ``slip > 0`` action 1 in
    state 0 lands in state 1 with that probability instead of state 2.
    """
    if not 0.0 <= slip <= 1.0:
        raise ContractViolation("slip must lie in [0, 1]")
    p = np.zeros((4, 2, 4))
    r = np.zeros((4, 2))
    term = np.zeros((4, 2, 4), dtype=bool)
    p[0, 0, 1] = 1.0
    p[0, 1, 2] = 1.0 - slip
    p[0, 1, 1] += slip
    p[1, :, 3] = 1.0
    p[2, :, 3] = 1.0
    p[3, :, 3] = 1.0
    r[1] = (1.0, 0.0)
    r[2] = (0.5, 0.5)
    term[1:, :, 3] = True
    return TabularEnv(p, r, np.zeros((4, 2)), term, gamma, 4, 0, (0.0, 1.0), name="probe4")


def uniform_policy(env: TabularEnv):
    return np.full((env.state_count, env.action_count), 1.0 / env.action_count)


def td_noise_probe(env: TabularEnv, policy, samples_per_sa: int, rng, q_table=None) -> ProbeResult:
    """Sample ``samples_per_sa`` TD targets for every ``(s, a)``.

    ``q_table`` defaults to the exact ``Q^pi`` of ``policy``. Terminal
    transitions contribute the bare reward.
    """
    if samples_per_sa < 2:
        raise ContractViolation("need at least two samples per pair")
    pi = np.asarray(policy, dtype=np.float64)
    if pi.shape != (env.state_count, env.action_count) or np.any(pi < 0):
        raise ContractViolation("policy must be an (S, A) probability table")
    if not np.allclose(pi.sum(axis=1), 1.0):
        raise ContractViolation("policy rows must sum to one")
    q = policy_q(env, pi)[0] if q_table is None else np.asarray(q_table, dtype=np.float64)
    cum_pi = np.cumsum(pi, axis=1)

    n = samples_per_sa
    shape = (env.state_count, env.action_count)
    mean, var, se = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    y = np.empty(n)
    for s in range(env.state_count):
        for a in range(env.action_count):
            for i in range(n):
                tr = env.step(s, a, rng)
                if tr.terminal:
                    y[i] = tr.reward
                    continue
                row = cum_pi[tr.next_state]
                a2 = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), env.action_count - 1)
                y[i] = tr.reward + env.gamma * q[tr.next_state, a2]
            shifted = y - y[0]  # exact zeros when every draw is identical
            m = shifted.mean()
            d = shifted - m
            v = d @ d / (n - 1)
            m4 = np.mean(d**4)
            mean[s, a] = y[0] + m
            var[s, a] = v
            # standard error of the unbiased sample variance
            se[s, a] = np.sqrt(max(m4 - v * v * (n - 3) / (n - 1), 0.0) / n)
    return ProbeResult(mean, var, se, n)
