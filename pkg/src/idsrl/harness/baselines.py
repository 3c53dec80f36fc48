"""Baseline exploration rules over the same ensemble interface as IDS."""

import numpy as np

from ..agent import Agent


def eps_greedy(agent: Agent, state, eps, rng):
    """Uniform random action with probability ``eps``, else the head-mean greedy action."""
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(agent.action_count))
    q, _ = agent.head_values(state)
    return int(np.argmax(q.mean(axis=0)))


def ts_head_sample(agent: Agent, state, head):
    """Greedy on one bootstrap head (the head is resampled once per episode)."""
    q, _ = agent.head_values(state)
    return int(np.argmax(q[head]))


def ucb_ensemble(agent: Agent, state, lam):
    q, _ = agent.head_values(state)
    return int(np.argmax(q.mean(axis=0) + lam * q.std(axis=0)))
