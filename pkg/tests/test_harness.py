import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from idsrl import envs
from idsrl.agent import AgentConfig, make_agent
from idsrl.harness import baselines
from idsrl.harness.aggregate import aggregate_and_plot, aggregate_runs
from idsrl.harness.cli import main
from idsrl.harness.config import ConfigError, load_config, parse_config
from idsrl.harness.csvio import CsvFormatError, read_csv, write_csv
from idsrl.harness.runner import run_experiment
from idsrl.harness.svg import Series, line_chart
from idsrl.harness.td_probe import four_state_mdp, td_noise_probe, uniform_policy

SMALL_RL = {
    "kind": "rl",
    "policies": ["ids-ratio", "eps-greedy"],
    "seeds": [0, 1, 2],
    "env": {"name": "chain", "length": 4, "gamma": 0.9},
    "schedule": {"total_steps": 60, "learning_starts": 8, "target_sync_interval": 10, "eval_interval": 20},
    "agent": {"n_heads": 2, "trunk_widths": [8], "head_width": 4, "dist_width": 4, "n_atoms": 11, "batch_size": 4,
              "buffer_capacity": 100},
}
SMALL_BANDIT = {"kind": "gp-bandit", "policies": ["gp-ucb", "gp-ids"], "seeds": [0, 1],
                "bandit": {"steps": 5, "grid_size": 16, "kernel": {"lengthscale": 0.2}}}
SMALL_PROBE = {"kind": "td-probe", "policies": ["uniform"], "seeds": [0], "env": {"name": "probe4"},
               "probe": {"samples_per_sa": 200}}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


class TestConfig:
    def test_parses_small_rl(self):
        cfg = parse_config(SMALL_RL)
        assert cfg.agent.trunk_widths == (8,)
        assert cfg.schedule.total_steps == 60
        assert cfg.build_env().state_count == 4

    @pytest.mark.parametrize(
        "patch, fragment",
        [
            ({"colour": 1}, "colour"),
            ({"agent": {"n_head": 3}}, "agent.n_head"),
            ({"env": {"name": "chain", "lenght": 3}}, "env.lenght"),
            ({"env": {"name": "maze"}}, "env.name"),
            ({"bandit": {"kernel": {"scale": 1.0}}}, "kernel.scale"),
            ({"policies": ["ids-ratio", "ids-ratio"]}, "duplicate"),
            ({"policies": ["gp-ucb"]}, "policies[0]"),
            ({"seeds": [-1]}, "seeds[0]"),
            ({"seeds": [True]}, "seeds[0]"),
            ({"seeds": []}, "seeds"),
            ({"agent": {"lr": "fast"}}, "agent.lr"),
            ({"threshold": 1.5}, "threshold"),
            ({"schedule": {"learning_starts": 2}}, "schedule"),
            ({"kind": "sim"}, "kind"),
        ],
    )
    def test_rejections_name_the_key(self, patch, fragment):
        data = dict(SMALL_RL)
        for k, v in patch.items():
            if isinstance(v, dict) and k == "bandit":
                data = dict(SMALL_BANDIT, bandit=v)
            else:
                data[k] = v
        with pytest.raises(ConfigError) as info:
            parse_config(data)
        assert fragment in str(info.value)

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config({"kind": "rl", "policies": ["ids-ratio"], "env": {"name": "chain"}})

    def test_json_errors_carry_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"kind": "rl",\n "seeds": [0,]}')
        with pytest.raises(ConfigError, match=r"bad.json:2:"):
            load_config(p)

    def test_duplicate_json_keys(self, tmp_path):
        p = tmp_path / "dup.json"
        p.write_text('{"kind": "rl", "kind": "gp-bandit"}')
        with pytest.raises(ConfigError, match="duplicate"):
            load_config(p)

    def test_shipped_configs_parse(self):
        from importlib.resources import files

        names = sorted(f.name for f in files("idsrl").joinpath("configs").iterdir() if f.name.endswith(".json"))
        assert names
        for name in names:
            load_config(files("idsrl").joinpath("configs", name))


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = [dict(a=np.float64(0.1), b=np.int64(3), c=True, d=None)]
        p = write_csv(tmp_path / "x.csv", "demo/v1", ("a", "b", "c", "d"), rows)
        assert p.read_text().splitlines()[0] == "#schema=demo/v1"
        schema, cols, back = read_csv(p)
        assert schema == "demo/v1" and cols == ["a", "b", "c", "d"]
        assert back == [dict(a="0.1", b="3", c="1", d="")]
        assert float(back[0]["a"]) == 0.1

    def test_rejects_missing_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(CsvFormatError, match="schema"):
            read_csv(p)

    def test_rejects_ragged_rows(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("#schema=demo/v1\na,b\n1,2,3\n")
        with pytest.raises(CsvFormatError, match=":3:"):
            read_csv(p)


def run_csv(path, values, policy=None):
    rows = [dict(step=i * 10, eval_return_mean=v) for i, v in enumerate(values)]
    return write_csv(path, "rl_metrics/v1", ("step", "eval_return_mean"), rows)


class TestAggregate:
    def test_mean_min_max(self, tmp_path):
        a = run_csv(tmp_path / "pol__seed0.csv", [2.0, 1.0])
        b = run_csv(tmp_path / "pol__seed1.csv", [4.0, 1.0])
        rows = aggregate_runs([a, b])
        assert rows[0] == dict(policy="pol", metric="eval_return_mean", step=0, n_runs=2, mean=3.0, min=2.0, max=4.0)
        assert rows[1]["min"] == rows[1]["max"] == rows[1]["mean"] == 1.0

    def test_single_run_collapses_band(self, tmp_path):
        rows = aggregate_runs([run_csv(tmp_path / "p__seed0.csv", [0.5, 0.7])])
        assert all(r["min"] == r["mean"] == r["max"] for r in rows)

    def test_band_contains_mean(self, tmp_path, rng):
        paths = [run_csv(tmp_path / f"p__seed{i}.csv", rng.normal(size=5)) for i in range(4)]
        for r in aggregate_runs(paths):
            assert r["min"] <= r["mean"] <= r["max"]

    def test_schema_mismatch(self, tmp_path):
        a = run_csv(tmp_path / "p__seed0.csv", [1.0])
        b = write_csv(tmp_path / "p__seed1.csv", "other/v1", ("step", "eval_return_mean"), [])
        with pytest.raises(CsvFormatError):
            aggregate_runs([a, b])

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "p__seed0.csv"
        p.write_text("#schema=rl_metrics/v1\nstep,eval_return_mean\n0,oops\n")
        with pytest.raises(CsvFormatError, match=":3:"):
            aggregate_runs([p])

    def test_writes_csv_and_svg(self, tmp_path):
        a = run_csv(tmp_path / "p__seed0.csv", [1.0, 2.0])
        _, csv_path, svg_path = aggregate_and_plot([a], tmp_path / "agg")
        assert read_csv(csv_path)[0] == "aggregate/v1"
        ET.fromstring(svg_path.read_text())


class TestSvg:
    def test_valid_xml_with_legend(self):
        s = Series("a<b", np.arange(3.0), np.array([1.0, 2.0, 3.0]), np.array([0.5, 1.5, 2.5]), np.array([1.5, 2.5, 3.5]))
        root = ET.fromstring(line_chart([s], title="t & u"))
        texts = [t.text for t in root.iter("{http://www.w3.org/2000/svg}text")]
        assert "a<b" in texts and "t & u" in texts
        assert len(list(root.iter("{http://www.w3.org/2000/svg}polyline"))) == 1

    def test_flat_series(self):
        s = Series("flat", np.array([0.0]), np.array([1.0]), np.array([1.0]), np.array([1.0]))
        ET.fromstring(line_chart([s]))


class TestRunner:
    def test_two_policies_three_seeds(self, tmp_path):
        cfg = parse_config(dict(SMALL_RL, out=str(tmp_path / "r")))
        summaries = run_experiment(cfg)
        assert [(s.policy, s.seed) for s in summaries] == [(p, k) for p in ("ids-ratio", "eps-greedy") for k in (0, 1, 2)]
        out = tmp_path / "r"
        assert len(list((out / "runs").glob("*.csv"))) == 6
        for name in ("summary.csv", "aggregate.csv", "aggregate.svg"):
            assert (out / name).exists()
        for s in summaries:
            assert 0 <= s.steps_to_threshold <= 60

    def test_rerun_is_bit_identical(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            cfg = parse_config(dict(SMALL_RL, seeds=[0, 1], out=str(tmp_path / tag)))
            run_experiment(cfg, trace=True)
            outs.append(tmp_path / tag)
        for name in ("aggregate.csv", "summary.csv", "runs/ids-ratio__seed1.csv", "traces/ids-ratio__seed1.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_process_pool_matches_serial(self, tmp_path):
        data = dict(SMALL_BANDIT)
        serial = run_experiment(parse_config(dict(data, out=str(tmp_path / "s"))))
        pooled = run_experiment(parse_config(dict(data, out=str(tmp_path / "p"))), threads=2)
        assert (tmp_path / "s/summary.csv").read_bytes() == (tmp_path / "p/summary.csv").read_bytes()
        assert [s.policy for s in serial] == [s.policy for s in pooled]

    def test_bandit_trace(self, tmp_path):
        run_experiment(parse_config(dict(SMALL_BANDIT, out=str(tmp_path))), trace=True)
        schema, _, rows = read_csv(tmp_path / "traces/gp-ids__seed0.csv")
        assert schema == "bandit_trace/v1"
        assert len(rows) == 5 * 16
        assert sum(r["chosen"] == "1" for r in rows) == 5

    def test_probe_output(self, tmp_path):
        run_experiment(parse_config(dict(SMALL_PROBE, out=str(tmp_path))))
        schema, _, rows = read_csv(tmp_path / "probe/uniform__seed0.csv")
        assert schema == "td_probe/v1" and len(rows) == 8
        assert not (tmp_path / "aggregate.csv").exists()


class TestCli:
    def test_ok(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "b.json", SMALL_BANDIT)
        assert main(["bandit", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "4"]) == 0
        assert (tmp_path / "o/runs/gp-ids__seed4.csv").exists()
        assert "gp-ids" in capsys.readouterr().out

    def test_config_error_exit(self, tmp_path):
        cfg = write_json(tmp_path / "b.json", dict(SMALL_BANDIT, extra=1))
        assert main(["bandit", "--config", str(cfg)]) == 2

    def test_kind_mismatch_exit(self, tmp_path):
        cfg = write_json(tmp_path / "b.json", SMALL_BANDIT)
        assert main(["train", "--config", str(cfg)]) == 2

    def test_bad_flag_exit(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--bogus"])
        assert info.value.code == 2

    def test_numerical_failure_exit(self, tmp_path):
        data = dict(SMALL_RL, policies=["ids-ratio"], seeds=[0])
        data["agent"] = dict(SMALL_RL["agent"], lr=1e300)
        cfg = write_json(tmp_path / "nan.json", data)
        with np.errstate(all="ignore"):
            assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_aggregate_command(self, tmp_path):
        run_csv(tmp_path / "runs" / "p__seed0.csv", [1.0])
        assert main(["aggregate", str(tmp_path / "runs"), "--out", str(tmp_path / "agg")]) == 0
        assert (tmp_path / "agg/aggregate.svg").exists()

    def test_module_entry_point(self, tmp_path):
        cfg = write_json(tmp_path / "p.json", SMALL_PROBE)
        proc = subprocess.run([sys.executable, "-m", "idsrl", "probe-td-noise", "--config", str(cfg), "--out",
                               str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr


class TestTdProbe:
    def test_uniform_policy_values(self):
        env = four_state_mdp(gamma=0.9)
        res = td_noise_probe(env, uniform_policy(env), 4000, np.random.default_rng(0))
        # from state 0 via action 0 the next action pays 1 or 0: variance gamma^2 / 4
        assert res.variance[0, 0] == pytest.approx(0.81 * 0.25, abs=4 * res.stderr[0, 0])
        assert res.separated()[0, 0]
        mask = np.ones((4, 2), bool)
        mask[0, 0] = False
        assert np.all(res.variance[mask] == 0.0)
        assert not res.separated()[mask].any()

    def test_greedy_policy_removes_noise(self):
        env = four_state_mdp()
        pi = np.zeros((4, 2))
        pi[:, 0] = 1.0
        res = td_noise_probe(env, pi, 100, np.random.default_rng(0))
        assert not res.separated().any()

    def test_slip_adds_transition_noise(self):
        env = four_state_mdp(slip=0.5)
        pi = np.zeros((4, 2))
        pi[:, 0] = 1.0
        res = td_noise_probe(env, pi, 4000, np.random.default_rng(0))
        # next value is 0.9 * 1 or 0.9 * 0.5 with equal odds
        assert res.variance[0, 1] == pytest.approx((0.9 * 0.25) ** 2, abs=4 * res.stderr[0, 1])

    def test_validation(self):
        env = four_state_mdp()
        with pytest.raises(envs.ContractViolation):
            td_noise_probe(env, uniform_policy(env), 1, np.random.default_rng(0))
        with pytest.raises(envs.ContractViolation):
            td_noise_probe(env, np.full((4, 2), 0.7), 10, np.random.default_rng(0))


class TestBaselines:
    @pytest.fixture
    def agent(self):
        env = envs.chain(4, gamma=0.9)
        return make_agent(env, AgentConfig(n_heads=3, trunk_widths=(8,), head_width=4, dist_width=4),
                          np.random.SeedSequence(0))

    def test_eps_zero_is_greedy(self, agent, rng):
        for s in range(4):
            assert baselines.eps_greedy(agent, s, 0.0, rng) == int(np.argmax(agent.head_values(s)[0].mean(axis=0)))

    def test_eps_one_is_uniform(self, agent):
        rng = np.random.default_rng(0)
        n = 4000
        picks = np.array([baselines.eps_greedy(agent, 0, 1.0, rng) for _ in range(n)])
        assert abs(picks.mean() - 0.5) < 3 * np.sqrt(0.25 / n)

    def test_ucb_without_spread_is_greedy(self, agent):
        agent.head_values = lambda s: (np.array([[0.2, 0.5], [0.2, 0.5]]), None)
        assert baselines.ucb_ensemble(agent, 0, 10.0) == 1

    def test_ucb_prefers_uncertain(self, agent):
        agent.head_values = lambda s: (np.array([[0.6, 0.0], [0.4, 1.0]]), None)
        assert baselines.ucb_ensemble(agent, 0, 0.0) == 1 - 1  # equal means: lowest index
        assert baselines.ucb_ensemble(agent, 0, 1.0) == 1

    def test_ts_follows_head(self, agent):
        agent.head_values = lambda s: (np.array([[1.0, 0.0], [0.0, 1.0]]), None)
        assert [baselines.ts_head_sample(agent, 0, h) for h in (0, 1)] == [0, 1]
