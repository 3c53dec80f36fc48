"""Bootstrapped Q-learning agent with a distributional head and IDS exploration.

The agent owns the ensemble network, its Adam state and a uniform replay
buffer. :meth:`Agent.act` runs IDS; the baseline exploration rules in
``idsrl.harness.baselines`` read the same ensemble through
:meth:`Agent.head_values`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distributional as D
from .envs import ContractViolation, TabularEnv, Transition
from .ids_policy import IdsConfig, IdsDecision, decide
from .nn import AdamState, EnsembleNetwork, NetworkShape, adam_step, init_network

DIST_KINDS = ("c51", "quantile", "none")


@dataclass(frozen=True)
class AgentConfig:
    n_heads: int = 10
    trunk_widths: tuple = (64, 64)
    head_width: int = 32
    dist_width: int = 32
    dist: str = "c51"
    n_atoms: int = 51
    n_quantiles: int = 51
    v_min: float | None = None
    v_max: float | None = None
    huber_kappa: float = D.QR_KAPPA
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 0.01 / 32
    batch_size: int = 32
    buffer_capacity: int = 50_000
    init_scale: float = 1.0
    head_init_scale: float = 1.0
    zero_bias_init: bool = False
    stop_dist_into_trunk: bool = True
    scale_heads_by_inv_k: bool = True
    dist_argmax: str = "target"

    def __post_init__(self):
        object.__setattr__(self, "trunk_widths", tuple(self.trunk_widths))
        if self.dist not in DIST_KINDS:
            raise ContractViolation(f"dist must be one of {DIST_KINDS}")
        if self.dist_argmax not in ("target", "online"):
            raise ContractViolation("dist_argmax must be 'target' or 'online'")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ContractViolation("buffer_capacity must be >= batch_size >= 1")


@dataclass(frozen=True)
class TrainSchedule:
    total_steps: int = 20_000
    learning_starts: int = 1_000
    train_frequency: int = 1
    target_sync_interval: int = 500
    eval_interval: int = 500
    eval_length: int = 5  # episodes per evaluation window

    def validate(self, batch_size):
        for name in ("total_steps", "learning_starts", "train_frequency", "target_sync_interval",
                     "eval_interval", "eval_length"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive")
        if self.learning_starts < batch_size:
            raise ContractViolation("learning_starts must be >= batch_size")


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolation("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros(capacity, dtype=np.int64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros(capacity, dtype=np.int64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, tr: Transition):
        i = self._next
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.terminals[i] = tr.terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size, rng):
        if self.size < batch_size:
            raise ContractViolation(f"buffer holds {self.size} < batch size {batch_size}")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size, rng):
        idx = self.sample_indices(batch_size, rng)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminals[idx])


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray


@dataclass
class TrainMetrics:
    loss_q: float
    loss_dist: float
    synced: bool


@dataclass
class Agent:
    config: AgentConfig
    network: EnsembleNetwork
    adam: AdamState
    buffer: ReplayBuffer
    gamma: float
    support: D.CategoricalSupport | None = None
    train_steps: int = 0
    last_decision: IdsDecision | None = field(default=None, repr=False)

    @property
    def state_count(self):
        return self.network.shape.input_dim

    @property
    def action_count(self):
        return self.network.shape.action_count

    def encode(self, states):
        return np.eye(self.state_count)[np.asarray(states, dtype=np.int64).reshape(-1)]

    # -- per-state quantities ------------------------------------------------

    def head_values(self, state):
        """Q-values of every head at one state, shape (K, A), plus the
        distributional output (A, N) or ``None``."""
        q, d = self.network.forward(self.encode([state]))
        return q[:, 0, :], None if d is None else d[0]

    def return_variance(self, dist_out):
        if self.config.dist == "c51":
            return D.categorical_variance(D.softmax(dist_out), self.support)
        if self.config.dist == "quantile":
            return D.quantile_variance(dist_out)
        raise ContractViolation("agent has no distributional head")

    def greedy_actions(self, states=None):
        """Mean-over-heads greedy action for each state (all states by default)."""
        if states is None:
            states = np.arange(self.state_count)
        q, _ = self.network.forward(self.encode(states))
        return q.mean(axis=0).argmax(axis=1)

    def act(self, state, ids_config: IdsConfig | None, mode="train", rng=None) -> int:
        """Eval mode: argmax of the head-averaged Q. Train mode: IDS."""
        q, d = self.head_values(state)
        if mode == "eval" or ids_config is None:
            return int(np.argmax(q.mean(axis=0)))
        if mode != "train":
            raise ContractViolation(f"unknown mode {mode!r}")
        var_z = None
        if ids_config.homoscedastic_rho2 is None:
            var_z = self.return_variance(d)
        decision = decide(q, var_z, ids_config, rng)
        self.last_decision = decision
        return decision.action

    # -- targets ---------------------------------------------------------------

    def q_targets(self, batch: Batch):
        """Per-head double-DQN targets, shape (K, B).

        Head k picks the next action with its online copy and evaluates it
        with its own target copy.
        """
        s2 = self.encode(batch.next_states)
        q_online, _ = self.network.forward(s2)
        q_target, _ = self.network.forward(s2, use_target=True)
        a_star = q_online.argmax(axis=2)  # (K, B)
        next_v = np.take_along_axis(q_target, a_star[:, :, None], axis=2)[:, :, 0]
        cont = self.gamma * (~batch.terminals)
        return batch.rewards[None, :] + cont[None, :] * next_v

    def dist_targets(self, batch: Batch, target_dist=None, online_dist=None):
        """Distributional targets at the greedy next action of the mean return.

        C51 returns projected probability rows (B, N); QR returns target
        samples (B, M).
        """
        if self.config.dist == "none":
            raise ContractViolation("agent has no distributional head")
        s2 = self.encode(batch.next_states)
        if target_dist is None:
            _, target_dist = self.network.forward(s2, use_target=True)
        select_from = target_dist
        if self.config.dist_argmax == "online":
            if online_dist is None:
                _, online_dist = self.network.forward(s2)
            select_from = online_dist
        cont = self.gamma * (~batch.terminals)
        rows = np.arange(len(batch.rewards))
        if self.config.dist == "c51":
            probs = D.softmax(target_dist)
            means = D.categorical_mean(D.softmax(select_from), self.support)
            a_star = means.argmax(axis=1)
            return D.project_categorical(batch.rewards, cont, probs[rows, a_star], self.support)
        a_star = select_from.mean(axis=2).argmax(axis=1)
        return batch.rewards[:, None] + cont[:, None] * target_dist[rows, a_star]

    # -- learning --------------------------------------------------------------

    def losses_and_grads(self, batch: Batch):
        s = self.encode(batch.states)
        q, d, cache = self.network.forward(s, with_cache=True)
        k, b = q.shape[0], q.shape[1]
        rows = np.arange(b)
        y = self.q_targets(batch)
        q_sa = q[:, rows, batch.actions]
        err = q_sa - y
        loss_q = 0.5 * np.mean(err * err, axis=1)  # one loss per head
        grad_q = np.zeros_like(q)
        grad_q[:, rows, batch.actions] = err / b

        loss_d = 0.0
        grad_d = None
        if self.config.dist != "none":
            grad_d = np.zeros_like(d)
            target = self.dist_targets(batch)
            if self.config.dist == "c51":
                l, g = D.categorical_kl_loss_grad(d[rows, batch.actions], target)
            else:
                l, g = D.quantile_huber_loss_grad(d[rows, batch.actions], target, self.config.huber_kappa)
            loss_d = float(np.mean(l))
            grad_d[rows, batch.actions] = g / b

        grads = self.network.backward(
            cache,
            grad_q,
            grad_d,
            stop_dist_into_trunk=self.config.stop_dist_into_trunk,
            scale_heads_by_inv_k=self.config.scale_heads_by_inv_k,
        )
        return float(np.sum(loss_q)), loss_d, grads

    def train_step(self, rng, sync=False) -> TrainMetrics:
        """One gradient step on a uniformly sampled minibatch."""
        batch = self.buffer.sample(self.config.batch_size, rng)
        loss_q, loss_d, grads = self.losses_and_grads(batch)
        self.network.apply_update(adam_step(self.adam, self.network.params, grads))
        self.train_steps += 1
        if sync:
            self.network.sync_target()
        return TrainMetrics(loss_q, loss_d, sync)


def make_agent(env: TabularEnv, config: AgentConfig, seed_seq) -> Agent:
    if config.dist == "c51":
        outputs = config.n_atoms
    elif config.dist == "quantile":
        outputs = config.n_quantiles
    else:
        outputs = 0
    shape = NetworkShape(
        input_dim=env.state_count,
        action_count=env.action_count,
        n_heads=config.n_heads,
        trunk_widths=config.trunk_widths,
        head_width=config.head_width,
        dist_outputs=outputs,
        dist_width=config.dist_width,
    )
    net = init_network(shape, seed_seq, config.init_scale, config.head_init_scale, config.zero_bias_init)
    support = None
    if config.dist == "c51":
        lo, hi = env.return_range()
        support = D.CategoricalSupport(
            lo if config.v_min is None else config.v_min,
            hi if config.v_max is None else config.v_max,
            config.n_atoms,
        )
    adam = AdamState(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    return Agent(config, net, adam, ReplayBuffer(config.buffer_capacity), env.gamma, support)


def evaluate(agent: Agent, env: TabularEnv, episodes: int, rng):
    """Run the head-averaged greedy policy; no learning, no exploration.

    Returns ``(mean, min, max)`` of undiscounted episode returns.
    """
    greedy = agent.greedy_actions()
    returns = []
    for _ in range(episodes):
        s = env.reset()
        total = 0.0
        for _ in range(env.horizon_cap):
            tr = env.step(s, int(greedy[s]), rng)
            total += tr.reward
            if tr.terminal:
                break
            s = tr.next_state
        returns.append(total)
    returns = np.asarray(returns)
    return float(returns.mean()), float(returns.min()), float(returns.max())
