"""Tabular environments with heteroscedastic returns and their exact oracles.

Every environment here is a finite MDP with Gaussian rewards
``R(s, a) ~ N(reward_mean[s, a], reward_std[s, a]^2)`` drawn independently of
the next state, a transition tensor ``P[s, a, s']`` and a terminal mask
``terminal[s, a, s']`` marking which transitions end the episode. That keeps
``true_q`` and ``true_return_variance`` exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ContractViolation(ValueError):
    """Raised when an operation is called outside its preconditions."""


@dataclass(frozen=True)
class EnvSpec:
    state_count: int
    action_count: int
    gamma: float
    horizon_cap: int

    def __post_init__(self):
        if self.state_count < 1 or self.action_count < 1:
            raise ContractViolation("state_count and action_count must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolation(f"gamma must be in [0, 1), got {self.gamma}")
        if self.horizon_cap < 1:
            raise ContractViolation("horizon_cap must be >= 1")


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool


@dataclass(frozen=True)
class HeteroBanditSpec:
    means: tuple
    noise_stdevs: tuple

    def __post_init__(self):
        if len(self.means) != len(self.noise_stdevs) or not self.means:
            raise ContractViolation("means and noise_stdevs must be nonempty and of equal length")
        if any(s < 0 for s in self.noise_stdevs):
            raise ContractViolation("noise_stdevs must be nonnegative")


@dataclass(frozen=True)
class ChainSpec:
    length: int
    small_reward: float = 0.001
    large_reward: float = 1.0
    step_noise_std: tuple | None = None

    def __post_init__(self):
        if self.length < 3:
            raise ContractViolation("chain length must be >= 3")
        if self.step_noise_std is not None:
            if len(self.step_noise_std) != self.length:
                raise ContractViolation("step_noise_std must have one entry per state")
            if any(s < 0 for s in self.step_noise_std):
                raise ContractViolation("step_noise_std must be nonnegative")


class TabularEnv:
    """Finite MDP with Gaussian rewards."""

    def __init__(
        self,
        transitions,
        reward_mean,
        reward_std,
        terminal,
        gamma,
        horizon_cap,
        start_state=0,
        return_range=None,
        name="tabular",
    ):
        p = np.asarray(transitions, dtype=np.float64)
        s, a, s2 = p.shape
        if s != s2:
            raise ContractViolation("transition tensor must be (S, A, S)")
        if not np.allclose(p.sum(-1), 1.0, atol=1e-12) or np.any(p < 0):
            raise ContractViolation("transition rows must be probability vectors")
        self.P = p
        self.reward_mean = np.broadcast_to(np.asarray(reward_mean, dtype=np.float64), (s, a)).copy()
        self.reward_std = np.broadcast_to(np.asarray(reward_std, dtype=np.float64), (s, a)).copy()
        if np.any(self.reward_std < 0):
            raise ContractViolation("reward_std must be nonnegative")
        self.terminal = np.broadcast_to(np.asarray(terminal, dtype=bool), (s, a, s)).copy()
        self.spec = EnvSpec(s, a, float(gamma), int(horizon_cap))
        if not 0 <= start_state < s:
            raise ContractViolation("start_state out of range")
        self.start_state = int(start_state)
        self.name = name
        self._cum_p = np.cumsum(self.P, axis=-1)
        self._return_range = return_range
        for arr in (self.P, self.reward_mean, self.reward_std, self.terminal, self._cum_p):
            arr.setflags(write=False)

    @property
    def state_count(self):
        return self.spec.state_count

    @property
    def action_count(self):
        return self.spec.action_count

    @property
    def gamma(self):
        return self.spec.gamma

    @property
    def horizon_cap(self):
        return self.spec.horizon_cap

    def reset(self) -> int:
        return self.start_state

    def step(self, state: int, action: int, rng: np.random.Generator) -> Transition:
        if not 0 <= action < self.action_count:
            raise ContractViolation(f"invalid action {action}")
        if not 0 <= state < self.state_count:
            raise ContractViolation(f"invalid state {state}")
        std = self.reward_std[state, action]
        reward = float(self.reward_mean[state, action])
        if std > 0:
            reward += float(std * rng.standard_normal())
        cum = self._cum_p[state, action]
        if cum[0] >= 1.0:
            nxt = 0
        elif self.P[state, action].max() == 1.0:
            nxt = int(np.argmax(self.P[state, action]))
        else:
            nxt = min(int(np.searchsorted(cum, rng.random(), side="right")), self.state_count - 1)
        return Transition(state, action, reward, nxt, bool(self.terminal[state, action, nxt]))

    def return_range(self):
        """``(v_min, v_max)`` hint for sizing a categorical support."""
        if self._return_range is not None:
            return tuple(self._return_range)
        lo = np.min(self.reward_mean - 3 * self.reward_std)
        hi = np.max(self.reward_mean + 3 * self.reward_std)
        horizon = min(self.horizon_cap, 1.0 / (1.0 - self.gamma))
        v_min = min(0.0, lo * horizon)
        v_max = max(0.0, hi * horizon)
        if v_max - v_min < 1e-6:
            v_max = v_min + 1.0
        return (float(v_min), float(v_max))

    def continue_mask(self):
        """``(S, A, S)`` transition weights excluding episode-ending transitions."""
        return self.P * (~self.terminal)


def hetero_bandit(means, noise_stdevs, horizon_cap=1, gamma=0.0, return_range=None):
    spec = HeteroBanditSpec(tuple(means), tuple(noise_stdevs))
    a = len(spec.means)
    return TabularEnv(
        np.ones((1, a, 1)),
        np.asarray(spec.means)[None, :],
        np.asarray(spec.noise_stdevs)[None, :],
        np.ones((1, a, 1), dtype=bool),
        gamma,
        horizon_cap,
        return_range=return_range,
        name="bandit",
    )


def chain(
    length=20,
    small_reward=0.001,
    large_reward=1.0,
    step_noise_std=None,
    gamma=0.99,
    horizon_cap=None,
    flip_seed=None,
    return_range=None,
    small_reward_std=0.0,
):
    """Deep-exploration chain.

    States ``0..N-1``, start at 0. Action 1 moves right, action 0 moves left
    (staying put at 0, where it pays ``small_reward``). Entering state
    ``N-1`` pays ``large_reward`` and ends the episode. ``step_noise_std[s]``
    adds Gaussian noise to every reward collected in state ``s``;
    ``small_reward_std`` adds noise to the small-reward action alone, making it
    a high-variance distractor. With
    ``flip_seed`` the meaning of the two actions is swapped in a random
    subset of states so that "always press 1" cannot be learned by
    generalization alone.
    """
    spec = ChainSpec(length, small_reward, large_reward, None if step_noise_std is None else tuple(step_noise_std))
    n = spec.length
    p = np.zeros((n, 2, n))
    r = np.zeros((n, 2))
    term = np.zeros((n, 2, n), dtype=bool)
    for s in range(n):
        p[s, 0, max(s - 1, 0)] = 1.0
        if s == n - 1:
            # unreachable absorbing end state; kept for a square tensor
            p[s, :, :] = 0.0
            p[s, :, s] = 1.0
            term[s, :, s] = True
            continue
        p[s, 1, s + 1] = 1.0
        if s + 1 == n - 1:
            r[s, 1] = spec.large_reward
            term[s, 1, n - 1] = True
    r[0, 0] = spec.small_reward
    noise = np.zeros(n) if spec.step_noise_std is None else np.asarray(spec.step_noise_std)
    std = np.repeat(noise[:, None], 2, axis=1)
    if small_reward_std < 0:
        raise ContractViolation("small_reward_std must be nonnegative")
    std[0, 0] = np.hypot(std[0, 0], small_reward_std)
    if flip_seed is not None:
        flips = np.random.default_rng(flip_seed).random(n) < 0.5
        p[flips] = p[flips][:, ::-1]
        r[flips] = r[flips][:, ::-1]
        term[flips] = term[flips][:, ::-1]
        std[flips] = std[flips][:, ::-1]
    if horizon_cap is None:
        horizon_cap = n + 9
    return TabularEnv(p, r, std, term, gamma, horizon_cap, 0, return_range, name="chain")


def hetero_grid(
    width=5,
    height=5,
    start=(0, 0),
    goal=(4, 4),
    goal_reward=1.0,
    step_reward=0.0,
    distractors=(),
    gamma=0.95,
    horizon_cap=30,
    return_range=None,
):
    """Deterministic grid world whose distractor cells pay noisy terminal rewards.

    Actions are up, right, down, left; moves into a wall stay put.
    ``distractors`` is a sequence of ``(x, y, mean, std)``. Entering such a
    cell pays ``N(mean, std^2)`` and ends the episode, as does entering
    ``goal`` (paying ``goal_reward``).
    """
    n = width * height

    def sid(x, y):
        return y * width + x

    moves = [(0, 1), (1, 0), (0, -1), (-1, 0)]
    p = np.zeros((n, 4, n))
    r = np.full((n, 4), float(step_reward))
    std = np.zeros((n, 4))
    term = np.zeros((n, 4, n), dtype=bool)
    cell_reward = {sid(*goal): (float(goal_reward), 0.0)}
    for x, y, mean, sd in distractors:
        cell_reward[sid(x, y)] = (float(mean), float(sd))
    for y in range(height):
        for x in range(width):
            s = sid(x, y)
            if s in cell_reward:
                p[s, :, s] = 1.0
                term[s, :, s] = True
                continue
            for a, (dx, dy) in enumerate(moves):
                dest = sid(min(max(x + dx, 0), width - 1), min(max(y + dy, 0), height - 1))
                p[s, a, dest] = 1.0
                if dest in cell_reward:
                    mean, sd = cell_reward[dest]
                    r[s, a] += mean
                    std[s, a] = sd
                    term[s, a, dest] = True
    return TabularEnv(p, r, std, term, gamma, horizon_cap, sid(*start), return_range, name="hetero_grid")


def true_q(env: TabularEnv, gamma=None, tol=1e-12, max_iter=1_000_000):
    """Optimal action values by value iteration (infinite-horizon, discounted)."""
    if not isinstance(env, TabularEnv):
        raise TypeError("true_q requires a tabular environment")
    g = env.gamma if gamma is None else gamma
    cont = env.continue_mask()
    q = np.zeros((env.state_count, env.action_count))
    for _ in range(max_iter):
        q_new = env.reward_mean + g * cont @ q.max(axis=1)
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    raise RuntimeError("value iteration did not converge")


def bellman_residual(env: TabularEnv, q, gamma=None):
    g = env.gamma if gamma is None else gamma
    return float(np.max(np.abs(env.reward_mean + g * env.continue_mask() @ q.max(axis=1) - q)))


def _policy_matrix(env, policy):
    pi = np.asarray(policy, dtype=np.float64)
    if pi.ndim == 1:
        pi = np.eye(env.action_count)[pi.astype(int)]
    if pi.shape != (env.state_count, env.action_count):
        raise ContractViolation("policy must be (S,) actions or (S, A) probabilities")
    return pi


def policy_q(env: TabularEnv, policy, gamma=None):
    """Exact ``Q^pi`` by solving the linear Bellman system."""
    g = env.gamma if gamma is None else gamma
    pi = _policy_matrix(env, policy)
    sa = env.state_count * env.action_count
    # next-(s,a) operator: T[(s,a),(s',a')] = P_cont(s'|s,a) pi(a'|s')
    t = (env.continue_mask()[:, :, :, None] * pi[None, None, :, :]).reshape(sa, sa)
    q = np.linalg.solve(np.eye(sa) - g * t, env.reward_mean.reshape(sa))
    return q.reshape(env.state_count, env.action_count), t


def true_return_variance(env: TabularEnv, policy, gamma=None):
    """Exact ``Var[Z^pi(s, a)]`` for the discounted return.

    Uses the second-moment recursion
    ``M = E[R^2] + 2 g E[R] (T Q) + g^2 T M``, valid because the reward noise
    is independent of the next state.
    """
    g = env.gamma if gamma is None else gamma
    q, t = policy_q(env, policy, g)
    sa = t.shape[0]
    rbar = env.reward_mean.reshape(sa)
    r2 = rbar**2 + env.reward_std.reshape(sa) ** 2
    rhs = r2 + 2.0 * g * rbar * (t @ q.reshape(sa))
    m = np.linalg.solve(np.eye(sa) - g * g * t, rhs)
    var = m - q.reshape(sa) ** 2
    return np.maximum(var, 0.0).reshape(env.state_count, env.action_count)


def rollout_return(env: TabularEnv, state, action, policy, rng, gamma=None, max_steps=10_000):
    """One Monte-Carlo sample of the discounted return from ``(state, action)``."""
    g = env.gamma if gamma is None else gamma
    pi = _policy_matrix(env, policy)
    total, disc = 0.0, 1.0
    s, a = state, action
    for _ in range(max_steps):
        tr = env.step(s, a, rng)
        total += disc * tr.reward
        if tr.terminal:
            break
        disc *= g
        s = tr.next_state
        a = int(rng.choice(env.action_count, p=pi[s]))
    return total


def capped_policy_value(env: TabularEnv, actions, horizon=None):
    """Expected undiscounted return from the start state for a deterministic
    policy, episodes truncated at ``horizon`` steps."""
    h = env.horizon_cap if horizon is None else horizon
    actions = np.asarray(actions, dtype=int)
    idx = np.arange(env.state_count)
    cont = env.continue_mask()[idx, actions]
    rew = env.reward_mean[idx, actions]
    v = np.zeros(env.state_count)
    for _ in range(h):
        v = rew + cont @ v
    return float(v[env.start_state])


def optimal_capped_value(env: TabularEnv, horizon=None):
    """Best expected undiscounted return from the start state within ``horizon``.

    Returns ``(value, first_step_policy)``; the policy is the argmax at the
    full horizon and is used only for diagnostics.
    """
    h = env.horizon_cap if horizon is None else horizon
    cont = env.continue_mask()
    v = np.zeros(env.state_count)
    q = env.reward_mean.copy()
    for _ in range(h):
        q = env.reward_mean + cont @ v
        v = q.max(axis=1)
    return float(v[env.start_state]), q.argmax(axis=1)
