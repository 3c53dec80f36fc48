import numpy as np
import pytest

from idsrl import distributional as D
from idsrl import envs
from idsrl.agent import AgentConfig, Batch, ReplayBuffer, TrainSchedule, evaluate, make_agent
from idsrl.envs import ContractViolation, Transition
from idsrl.harness.csvio import read_csv
from idsrl.harness.rl import run_rl
from idsrl.ids_policy import IdsConfig

TINY = AgentConfig(n_heads=2, trunk_widths=(8,), head_width=4, dist_width=4, n_atoms=11, batch_size=4,
                   buffer_capacity=64)


def tiny_agent(env=None, seed=0, **kw):
    env = env or envs.chain(4, gamma=0.9)
    cfg = AgentConfig(**{**TINY.__dict__, **kw})
    return make_agent(env, cfg, np.random.SeedSequence(seed)), env


def fill(agent, env, n, seed=0):
    rng = np.random.default_rng(seed)
    s = env.reset()
    for _ in range(n):
        tr = env.step(s, int(rng.integers(env.action_count)), rng)
        agent.buffer.add(tr)
        s = env.reset() if tr.terminal else tr.next_state


class TestReplayBuffer:
    def test_ring_overwrites_oldest(self):
        buf = ReplayBuffer(3)
        for i in range(5):
            buf.add(Transition(i, 0, float(i), i, False))
        assert len(buf) == 3
        assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]

    def test_sampling_needs_enough_data(self, rng):
        buf = ReplayBuffer(10)
        buf.add(Transition(0, 0, 0.0, 0, False))
        with pytest.raises(ContractViolation):
            buf.sample(2, rng)

    def test_uniform_inclusion(self):
        buf = ReplayBuffer(20)
        for i in range(20):
            buf.add(Transition(i, 0, 0.0, 0, False))
        rng = np.random.default_rng(0)
        n = 100_000
        draws = np.concatenate([buf.sample_indices(20, rng) for _ in range(n // 20)])
        counts = np.bincount(draws, minlength=20)
        p = 1 / 20
        se = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 4 * se)

    def test_rejects_bad_capacity(self):
        with pytest.raises(ContractViolation):
            ReplayBuffer(0)


class TestConfig:
    def test_rejects_unknown_dist(self):
        with pytest.raises(ContractViolation):
            AgentConfig(dist="gaussian")

    def test_schedule_validation(self):
        with pytest.raises(ContractViolation):
            TrainSchedule(learning_starts=8).validate(batch_size=32)
        with pytest.raises(ContractViolation):
            TrainSchedule(train_frequency=0).validate(batch_size=1)


class TestAct:
    def test_eval_mode_uses_head_mean(self):
        agent, _ = tiny_agent()
        agent.head_values = lambda s: (np.array([[1.0, 2.0], [3.0, 0.0]]), None)
        assert agent.act(0, IdsConfig(), mode="eval") == 0

    def test_train_mode_with_equal_heads_is_greedy(self):
        agent, _ = tiny_agent()
        agent.head_values = lambda s: (np.array([[0.1, 0.7], [0.1, 0.7]]), np.zeros((2, 11)))
        assert agent.act(0, IdsConfig(), mode="train") == 1
        np.testing.assert_allclose(agent.last_decision.gain, 1e-5)

    def test_deterministic(self):
        a1, _ = tiny_agent(seed=5)
        a2, _ = tiny_agent(seed=5)
        assert [a1.act(s, IdsConfig()) for s in range(4)] == [a2.act(s, IdsConfig()) for s in range(4)]

    def test_unknown_mode(self):
        agent, _ = tiny_agent()
        with pytest.raises(ContractViolation):
            agent.act(0, IdsConfig(), mode="explore")


class TestTargets:
    def test_terminal_target_is_reward(self):
        agent, _ = tiny_agent()
        b = Batch(np.array([2]), np.array([1]), np.array([0.7]), np.array([3]), np.array([True]))
        np.testing.assert_array_equal(agent.q_targets(b), [[0.7], [0.7]])

    def test_double_dqn_by_hand(self):
        agent, _ = tiny_agent()
        online = np.array([[[0.0, 1.0]], [[2.0, 0.0]]])  # head 0 picks a=1, head 1 picks a=0
        target = np.array([[[5.0, 6.0]], [[7.0, 8.0]]])

        def fake_forward(x, use_target=False, with_cache=False):
            return (target if use_target else online), None

        agent.network.forward = fake_forward
        b = Batch(np.array([0]), np.array([0]), np.array([1.0]), np.array([1]), np.array([False]))
        y = agent.q_targets(b)
        np.testing.assert_allclose(y[:, 0], [1.0 + 0.9 * 6.0, 1.0 + 0.9 * 7.0])

    def test_heads_disagree_when_argmax_differs(self):
        agent, _ = tiny_agent()
        online = np.array([[[0.0, 1.0]], [[2.0, 0.0]]])
        target = np.array([[[3.0, 3.5]], [[3.0, 3.5]]])
        agent.network.forward = lambda x, use_target=False, with_cache=False: (target if use_target else online, None)
        b = Batch(np.array([0]), np.array([0]), np.array([0.0]), np.array([1]), np.array([False]))
        y = agent.q_targets(b)
        assert y[0, 0] != y[1, 0]

    def test_dist_target_terminal_on_atom_is_point_mass(self):
        agent, _ = tiny_agent()
        atom = agent.support.atoms[3]
        b = Batch(np.array([0]), np.array([0]), np.array([atom]), np.array([1]), np.array([True]))
        out = agent.dist_targets(b)
        assert np.flatnonzero(out[0]).tolist() == [3]
        assert out[0, 3] == pytest.approx(1.0, abs=1e-14)

    def test_dist_target_composes_oracles(self):
        agent, env = tiny_agent()
        rng = np.random.default_rng(2)
        b = Batch(rng.integers(0, 4, 6), rng.integers(0, 2, 6), rng.normal(size=6) * 0.3, rng.integers(0, 4, 6),
                  rng.random(6) < 0.3)
        _, d_target = agent.network.forward(agent.encode(b.next_states), use_target=True)
        probs = D.softmax(d_target)
        a_star = D.categorical_mean(probs, agent.support).argmax(axis=1)
        rows = np.arange(6)
        ref = D.project_categorical(b.rewards, 0.9 * ~b.terminals, probs[rows, a_star], agent.support)
        np.testing.assert_allclose(agent.dist_targets(b), ref, atol=1e-15)

    def test_myopic_target_ignores_next_state(self):
        env = envs.hetero_bandit([1.0, 0.0], [0.0, 1.0])
        agent, _ = tiny_agent(env)
        b1 = Batch(np.array([0]), np.array([0]), np.array([0.4]), np.array([0]), np.array([True]))
        agent.network.sync_target()
        out_before = agent.dist_targets(b1)
        agent.network.target_params = {k: v * 3.0 for k, v in agent.network.target_params.items()}
        np.testing.assert_allclose(agent.dist_targets(b1), out_before, atol=1e-15)

    def test_quantile_targets(self):
        agent, _ = tiny_agent(dist="quantile", n_quantiles=5)
        b = Batch(np.array([0]), np.array([0]), np.array([0.5]), np.array([1]), np.array([True]))
        np.testing.assert_array_equal(agent.dist_targets(b), np.full((1, 5), 0.5))


class TestTraining:
    def test_train_step_is_deterministic(self):
        outs = []
        for _ in range(2):
            agent, env = tiny_agent(seed=3)
            fill(agent, env, 30)
            agent.train_step(np.random.default_rng(0))
            outs.append(agent.network.params)
        for k in outs[0]:
            np.testing.assert_array_equal(outs[0][k], outs[1][k])

    def test_train_step_changes_online_only(self):
        agent, env = tiny_agent()
        fill(agent, env, 30)
        before = {k: v.copy() for k, v in agent.network.params.items()}
        m = agent.train_step(np.random.default_rng(0))
        assert np.isfinite(m.loss_q) and m.loss_dist > 0
        assert any(not np.array_equal(before[k], agent.network.params[k]) for k in before)
        for k in before:
            np.testing.assert_array_equal(agent.network.target_params[k], before[k])

    def test_no_learning_before_learning_starts(self):
        env = envs.chain(4, gamma=0.9)
        cfg = TINY
        sch = TrainSchedule(total_steps=20, learning_starts=30, target_sync_interval=5, eval_interval=10)
        agent0 = make_agent(env, cfg, np.random.SeedSequence(7).spawn(5)[0])
        captured = {}
        import idsrl.harness.rl as rl_mod

        orig = rl_mod.make_agent

        def keep(*a, **k):
            captured["agent"] = orig(*a, **k)
            return captured["agent"]

        rl_mod.make_agent = keep
        try:
            run_rl(env, "ids-ratio", 7, cfg, IdsConfig(), sch)
        finally:
            rl_mod.make_agent = orig
        for k in agent0.network.params:
            np.testing.assert_array_equal(captured["agent"].network.params[k], agent0.network.params[k])

    def test_target_synced_on_schedule(self):
        env = envs.chain(4, gamma=0.9)
        sch = TrainSchedule(total_steps=40, learning_starts=10, target_sync_interval=20, eval_interval=40)
        import idsrl.harness.rl as rl_mod

        captured = {}
        orig = rl_mod.make_agent

        def keep(*a, **k):
            captured["agent"] = orig(*a, **k)
            return captured["agent"]

        rl_mod.make_agent = keep
        try:
            run_rl(env, "ids-ratio", 0, TINY, IdsConfig(), sch)
        finally:
            rl_mod.make_agent = orig
        net = captured["agent"].network
        assert net.sync_count == 2
        for k in net.params:
            np.testing.assert_array_equal(net.params[k], net.target_params[k])


class TestEvaluate:
    def test_deterministic_env_has_no_spread(self):
        agent, env = tiny_agent()
        mean, lo, hi = evaluate(agent, env, 4, np.random.default_rng(0))
        assert lo == hi == mean

    def test_matches_hand_rollout(self):
        env = envs.chain(3, step_noise_std=[0.1, 0.1, 0.0], gamma=0.9)
        agent, _ = tiny_agent(env)
        greedy = agent.greedy_actions()
        rng = np.random.default_rng(4)
        expected = []
        for _ in range(3):
            s, total = 0, 0.0
            for _ in range(env.horizon_cap):
                tr = env.step(s, int(greedy[s]), rng)
                total += tr.reward
                if tr.terminal:
                    break
                s = tr.next_state
            expected.append(total)
        mean, lo, hi = evaluate(agent, env, 3, np.random.default_rng(4))
        assert mean == pytest.approx(np.mean(expected), abs=1e-15)
        assert (lo, hi) == (min(expected), max(expected))

    def test_converged_bandit_returns_best_arm(self):
        env = envs.hetero_bandit([1.0, 0.0], [0.0, 2.0])
        agent, _ = tiny_agent(env)
        agent.head_values = None
        agent.greedy_actions = lambda states=None: np.array([0])
        assert evaluate(agent, env, 5, np.random.default_rng(0))[0] == 1.0


class TestHeteroscedasticBandit:
    """Both agents settle on the noiseless arm; the distributional head sees the noise."""

    @staticmethod
    @pytest.fixture(scope="class")
    def runs(tmp_path_factory):
        env = envs.hetero_bandit([1.0, 0.0], [0.0, 2.0], return_range=(-8.0, 8.0))
        cfg = AgentConfig(n_heads=10, trunk_widths=(16,), head_width=8, dist_width=16, buffer_capacity=5000)
        sch = TrainSchedule(total_steps=2000, learning_starts=100, target_sync_interval=50, eval_interval=500)
        out = {}
        for policy in ("c51-ids", "dqn-ids"):
            trace = tmp_path_factory.mktemp(policy) / "trace.csv"
            res = run_rl(env, policy, 0, cfg, IdsConfig(lam=1.0), sch, trace_path=trace)
            out[policy] = (res, read_csv(trace)[2])
        return out

    def test_both_identify_arm_zero(self, runs):
        for policy, (res, _) in runs.items():
            assert res.rows[-1]["greedy_value"] == 1.0, policy

    def test_noise_estimate_orders_arms(self, runs):
        rows = runs["c51-ids"][1]
        late = rows[len(rows) // 2 :]
        rho0 = np.mean([float(r["rho2_0"]) for r in late])
        rho1 = np.mean([float(r["rho2_1"]) for r in late])
        assert rho1 > rho0
        dqn_rows = runs["dqn-ids"][1]
        assert {r["rho2_0"] for r in dqn_rows} == {"1.0"}
