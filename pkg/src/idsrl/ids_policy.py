"""Deterministic information-directed action selection over a Q-ensemble.

For one state the pipeline is

    ensemble mean/variance -> conservative regret -> normalized noise
    variance -> information gain -> argmin of the regret-information ratio

The individual steps are exposed for testing and for the bandit module; the
agent's hot path goes through :func:`decide`, which runs the whole thing in
one compiled call when the extension is available.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .envs import ContractViolation

MODES = ("ratio", "additive")


@dataclass(frozen=True)
class IdsConfig:
    lam: float = 0.1
    eps1: float = 1e-5
    eps2: float = 1e-5
    rho2_floor: float = 0.25
    mode: str = "ratio"
    beta: float = 1.0
    homoscedastic_rho2: float | None = None
    random_ties: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ContractViolation("lambda must be nonnegative")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ContractViolation("eps1 and eps2 must be positive")
        if self.rho2_floor < 0:
            raise ContractViolation("rho2_floor must be nonnegative")
        if self.mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}")
        if self.beta < 0:
            raise ContractViolation("beta must be nonnegative")
        if self.homoscedastic_rho2 is not None and self.homoscedastic_rho2 <= 0:
            raise ContractViolation("homoscedastic_rho2 must be positive")


@dataclass(frozen=True)
class IdsDecision:
    mu: np.ndarray
    sigma2: np.ndarray
    delta: np.ndarray
    rho2: np.ndarray
    gain: np.ndarray
    psi: np.ndarray
    action: int
    mode: str


def ensemble_stats(q_values):
    """Per-action mean and population variance over the K heads of ``q_values[K, A]``."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ContractViolation("ensemble_stats needs q_values of shape (K>=2, A)")
    mu = q.mean(axis=0)
    return mu, ((q - mu) ** 2).mean(axis=0)


def regret_surrogate(mu, sigma, lam):
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ContractViolation("sigma must be nonnegative")
    return np.max(mu + lam * sigma) - (mu - lam * sigma)


def normalized_noise_variance(var_z, eps1, rho2_floor=0.0):
    """Return variances rescaled to unit mean over actions, then floored."""
    var_z = np.asarray(var_z, dtype=np.float64)
    if np.any(var_z < 0):
        raise ContractViolation("return variances must be nonnegative")
    rho2 = var_z / (eps1 + var_z.mean())
    return np.maximum(rho2, rho2_floor)


def information_gain(sigma2, rho2, eps2):
    rho2 = np.asarray(rho2, dtype=np.float64)
    if np.any(rho2 <= 0):
        raise ContractViolation("noise variance rho^2 must be positive")
    return np.log1p(np.asarray(sigma2, dtype=np.float64) / rho2) + eps2


def homoscedastic_gain(sigma2, rho2_const, eps2):
    if rho2_const <= 0:
        raise ContractViolation("rho2_const must be positive")
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    return information_gain(sigma2, np.full(sigma2.shape, float(rho2_const)), eps2)


def objective(delta, gain, mode="ratio", beta=1.0):
    delta = np.asarray(delta, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if mode == "ratio":
        return delta * delta / gain
    if mode == "additive":
        return delta * delta - beta * gain
    raise ContractViolation(f"unknown mode {mode!r}")


def _argmin(values, rng=None):
    if rng is None:
        return int(np.argmin(values))
    ties = np.flatnonzero(values == values.min())
    return int(ties[rng.integers(len(ties))]) if len(ties) > 1 else int(ties[0])


def select(mu, sigma2, delta, rho2, gain, config: IdsConfig, rng=None) -> IdsDecision:
    """Pick the action minimizing the configured IDS objective."""
    arrays = [np.asarray(x, dtype=np.float64) for x in (mu, sigma2, delta, rho2, gain)]
    if len({a.shape for a in arrays}) != 1:
        raise ContractViolation("all per-action inputs must share one shape")
    psi = objective(arrays[2], arrays[4], config.mode, config.beta)
    action = _argmin(psi, rng if config.random_ties else None)
    return IdsDecision(*arrays, psi, action, config.mode)


def decide(q_values, var_z, config: IdsConfig, rng=None) -> IdsDecision:
    """Full IDS step for one state.

    ``var_z`` holds Var(Z(s, a)) from the distributional head; it is ignored
    (and may be ``None``) when ``config.homoscedastic_rho2`` is set.
    """
    q = np.asarray(q_values, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ContractViolation("decide needs q_values of shape (K>=2, A)")
    rho2_const = config.homoscedastic_rho2 or 0.0
    if rho2_const == 0.0:
        if var_z is None:
            raise ContractViolation("var_z required without homoscedastic_rho2")
        var_z = np.asarray(var_z, dtype=np.float64)
        if var_z.shape != (q.shape[1],):
            raise ContractViolation("var_z must have one entry per action")
        if config.rho2_floor <= 0 and np.any(var_z <= 0):
            raise ContractViolation("zero return variance with the floor disabled")
    mode = _kernels.RATIO if config.mode == "ratio" else _kernels.ADDITIVE
    mu, s2, delta, rho2, gain, psi, action = _kernels.ids_scores(
        q, var_z, config.lam, config.eps1, config.eps2, config.rho2_floor, rho2_const, mode, config.beta
    )
    if config.random_ties and rng is not None:
        action = _argmin(psi, rng)
    return IdsDecision(mu, s2, delta, rho2, gain, psi, action, config.mode)


class DecisionTrace:
    """CSV debug trace of IDS decisions, one row per step."""

    QUANTITIES = ("mu", "sigma2", "delta", "rho2", "gain", "psi")

    def __init__(self, path, action_count):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        cols = ["step", "state", "mode", "action"]
        cols += [f"{q}_{a}" for q in self.QUANTITIES for a in range(action_count)]
        self._fh.write("#schema=ids_trace/v1\n")
        self._writer.writerow(cols)

    def write(self, step, state, decision: IdsDecision):
        row = [step, state, decision.mode, decision.action]
        for q in self.QUANTITIES:
            row += [repr(float(v)) for v in getattr(decision, q)]
        self._writer.writerow(row)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
