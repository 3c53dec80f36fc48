"""JSON experiment configuration with strict key checking.

Top-level keys::

    kind       "rl" | "gp-bandit" | "td-probe"                      (required)
    policies   list of policy names                                  (required)
    seeds      list of integers                                      (required)
    env        {"name": ..., builder keyword arguments}              (rl, td-probe)
    schedule   TrainSchedule fields                                  (rl)
    agent      AgentConfig fields                                    (rl)
    ids        IdsConfig fields                                      (rl)
    baseline   BaselineConfig fields                                 (rl)
    threshold  fraction of the optimal return counted as solved      (rl, default 0.95)
    stop_at_threshold  end a run at the first solved evaluation      (rl, default false)
    budget     step budget recorded alongside the run (informative)  (rl, optional)
    bandit     BanditRunConfig fields, with nested "kernel"/"problem" (gp-bandit)
    probe      {"samples_per_sa": int, "temperature": float}         (td-probe)
    out        output directory                                      (default "runs")

Any other key, at any nesting level, is an error.
"""

from __future__ import annotations

import dataclasses
import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path

from .. import envs
from ..agent import AgentConfig, TrainSchedule
from ..envs import ContractViolation
from ..gp_bandit import POLICIES as BANDIT_POLICIES
from ..gp_bandit import BanditRunConfig, HeteroFunction, Kernel
from ..ids_policy import IdsConfig
from .rl import RL_POLICIES, BaselineConfig
from .td_probe import four_state_mdp

KINDS = ("rl", "gp-bandit", "td-probe")
PROBE_POLICIES = ("uniform", "softmax")

ENV_BUILDERS = {
    "chain": envs.chain,
    "hetero-bandit": envs.hetero_bandit,
    "hetero-grid": envs.hetero_grid,
    "probe4": four_state_mdp,
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; message names the offending key."""


@dataclass(frozen=True)
class ProbeConfig:
    samples_per_sa: int = 20_000
    temperature: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    policies: tuple
    seeds: tuple
    env: dict = field(default_factory=dict)
    schedule: TrainSchedule = TrainSchedule()
    agent: AgentConfig = AgentConfig()
    ids: IdsConfig = IdsConfig()
    baseline: BaselineConfig = BaselineConfig()
    threshold: float = 0.95
    stop_at_threshold: bool = False
    budget: int | None = None
    bandit: BanditRunConfig = BanditRunConfig()
    probe: ProbeConfig = ProbeConfig()
    out: str = "runs"

    def build_env(self):
        return build_env(self.env)

    def with_seed(self, seed):
        return dataclasses.replace(self, seeds=(int(seed),))

    def with_out(self, out):
        return dataclasses.replace(self, out=str(out))


def _check_type(value, default, where):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {type(value).__name__}")


def _to_tuple(v):
    return tuple(_to_tuple(x) for x in v) if isinstance(v, list) else v


def _build(cls, data, where, nested=None):
    """Instantiate dataclass ``cls`` from ``data`` rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    nested = nested or {}
    known = {f.name: f for f in dataclasses.fields(cls) if not f.name.startswith("_")}
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{where}.{key}: unknown key (allowed: {', '.join(sorted(known))})")
        if key in nested:
            kwargs[key] = _build(nested[key], value, f"{where}.{key}")
            continue
        default = getattr(defaults, key)
        if value is not None or default is not None:
            _check_type(value, default, f"{where}.{key}")
        kwargs[key] = _to_tuple(value)
    try:
        return cls(**kwargs)
    except (ContractViolation, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_env(spec):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("env: expected an object with a 'name' key")
    name = spec["name"]
    if name not in ENV_BUILDERS:
        raise ConfigError(f"env.name: unknown environment {name!r} (allowed: {', '.join(ENV_BUILDERS)})")
    builder = ENV_BUILDERS[name]
    params = inspect.signature(builder).parameters
    kwargs = {}
    for key, value in spec.items():
        if key == "name":
            continue
        if key not in params:
            raise ConfigError(f"env.{key}: unknown key for {name!r} (allowed: {', '.join(params)})")
        kwargs[key] = _to_tuple(value)
    try:
        return builder(**kwargs)
    except (ContractViolation, TypeError, ValueError) as exc:
        raise ConfigError(f"env: {exc}") from exc


_TOP_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}
_REQUIRED = ("kind", "policies", "seeds")


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown key (allowed: {', '.join(sorted(_TOP_KEYS))})")
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"{key}: required key missing")
    kind = data["kind"]
    if kind not in KINDS:
        raise ConfigError(f"kind: must be one of {KINDS}, got {kind!r}")

    policies = data["policies"]
    allowed = {"rl": RL_POLICIES, "gp-bandit": BANDIT_POLICIES, "td-probe": PROBE_POLICIES}[kind]
    if not isinstance(policies, list) or not policies:
        raise ConfigError("policies: expected a non-empty list")
    for i, p in enumerate(policies):
        if p not in allowed:
            raise ConfigError(f"policies[{i}]: {p!r} is not a {kind} policy (allowed: {', '.join(allowed)})")
    if len(set(policies)) != len(policies):
        raise ConfigError("policies: duplicate entries")
    seeds = data["seeds"]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds: expected a non-empty list")
    for i, s in enumerate(seeds):
        if not isinstance(s, int) or isinstance(s, bool) or s < 0:
            raise ConfigError(f"seeds[{i}]: expected a non-negative integer")

    kwargs = dict(kind=kind, policies=tuple(policies), seeds=tuple(seeds))
    if "env" in data:
        build_env(data["env"])  # validate eagerly so errors carry the key path
        kwargs["env"] = dict(data["env"])
    elif kind != "gp-bandit":
        raise ConfigError("env: required for kind " + repr(kind))
    if "schedule" in data:
        kwargs["schedule"] = _build(TrainSchedule, data["schedule"], "schedule")
    if "agent" in data:
        kwargs["agent"] = _build(AgentConfig, data["agent"], "agent")
    if "ids" in data:
        kwargs["ids"] = _build(IdsConfig, data["ids"], "ids")
    if "baseline" in data:
        kwargs["baseline"] = _build(BaselineConfig, data["baseline"], "baseline")
    if "bandit" in data:
        kwargs["bandit"] = _build(BanditRunConfig, data["bandit"], "bandit",
                                  nested={"kernel": Kernel, "problem": HeteroFunction})
    if "probe" in data:
        kwargs["probe"] = _build(ProbeConfig, data["probe"], "probe")
    for key, default in (("threshold", 0.95), ("stop_at_threshold", False), ("out", "runs")):
        if key in data:
            _check_type(data[key], default, key)
            kwargs[key] = data[key]
    if "budget" in data:
        _check_type(data["budget"], 0, "budget")
        kwargs["budget"] = data["budget"]
    cfg = ExperimentConfig(**kwargs)
    if kind == "rl":
        try:
            cfg.schedule.validate(cfg.agent.batch_size)
        except ContractViolation as exc:
            raise ConfigError(f"schedule: {exc}") from exc
        if not 0.0 < cfg.threshold <= 1.0:
            raise ConfigError("threshold: must lie in (0, 1]")
    if kind == "td-probe" and cfg.probe.samples_per_sa < 2:
        raise ConfigError("probe.samples_per_sa: must be at least 2")
    return cfg


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"{k}: duplicate key")
        out[k] = v
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return parse_config(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
