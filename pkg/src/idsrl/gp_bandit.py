"""Gaussian-process bandit with heteroscedastic observation noise.

Three acquisition rules share one posterior: UCB, joint Thompson sampling
over the candidate grid, and deterministic IDS with the log information gain
``log(1 + sigma^2 / rho^2)``. Only IDS looks at the noise variance of the
candidate it is about to evaluate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .envs import ContractViolation

JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class PosteriorFactorizationError(ArithmeticError):
    """Kernel matrix stayed indefinite after the whole jitter ladder."""


@dataclass(frozen=True)
class Kernel:
    lengthscale: float = 0.1
    signal_variance: float = 1.0
    variant: str = "rbf"

    def __post_init__(self):
        if self.variant != "rbf":
            raise ContractViolation(f"unsupported kernel {self.variant!r}")
        if self.lengthscale <= 0 or self.signal_variance <= 0:
            raise ContractViolation("lengthscale and signal_variance must be positive")

    def __call__(self, a, b):
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        d = a[:, None] - b[None, :]
        return self.signal_variance * np.exp(-0.5 * (d / self.lengthscale) ** 2)


@dataclass(frozen=True)
class GpPosterior:
    kernel: Kernel
    inputs: np.ndarray
    observations: np.ndarray
    noise_variances: np.ndarray
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def _cross(self, x):
        return self.kernel(self.inputs, x)

    def mean_var(self, x):
        """Posterior mean and (clamped, nonnegative) variance at query points."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        prior_var = np.full(x.shape, self.kernel.signal_variance)
        if self.inputs.size == 0:
            return np.zeros(x.shape), prior_var
        ks = self._cross(x)
        mean = ks.T @ self.alpha
        v = solve_triangular(self.chol, ks, lower=True, check_finite=False)
        var = prior_var - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def mean_cov(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        prior = self.kernel(x, x)
        if self.inputs.size == 0:
            return np.zeros(x.shape), prior
        ks = self._cross(x)
        v = solve_triangular(self.chol, ks, lower=True, check_finite=False)
        return ks.T @ self.alpha, prior - v.T @ v


def _cholesky_with_jitter(mat, jitter):
    n = mat.shape[0]
    ladder = [jitter] + [j for j in JITTER_LADDER if j > jitter]
    for j in ladder:
        try:
            return np.linalg.cholesky(mat + j * np.eye(n)), j
        except np.linalg.LinAlgError:
            continue
    eig = np.linalg.eigvalsh(mat)
    raise PosteriorFactorizationError(
        f"kernel matrix not positive definite after jitter {ladder[-1]:g}; "
        f"eigenvalue range [{eig.min():.3g}, {eig.max():.3g}], size {n}"
    )


def posterior_fit(inputs, observations, noise_variances, kernel: Kernel, jitter=0.0) -> GpPosterior:
    """Exact GP regression with a per-observation noise variance."""
    x = np.asarray(inputs, dtype=np.float64).reshape(-1)
    y = np.asarray(observations, dtype=np.float64).reshape(-1)
    noise = np.asarray(noise_variances, dtype=np.float64).reshape(-1)
    if not (x.shape == y.shape == noise.shape):
        raise ContractViolation("inputs, observations and noise_variances must have equal length")
    if np.any(noise < 0) or jitter < 0:
        raise ContractViolation("noise variances and jitter must be nonnegative")
    if x.size == 0:
        empty = np.zeros((0, 0))
        return GpPosterior(kernel, x, y, noise, empty, np.zeros(0), jitter)
    mat = kernel(x, x) + np.diag(noise)
    chol, used = _cholesky_with_jitter(mat, jitter)
    alpha = solve_triangular(chol.T, solve_triangular(chol, y, lower=True), lower=False)
    return GpPosterior(kernel, x, y, noise, chol, alpha, used)


def ucb_select(posterior: GpPosterior, candidates, beta_t) -> int:
    mean, var = posterior.mean_var(candidates)
    return int(np.argmax(mean + np.sqrt(beta_t) * np.sqrt(var)))


def ts_select(posterior: GpPosterior, candidates, rng) -> int:
    """Argmax of one joint posterior sample over ``candidates``."""
    mean, cov = posterior.mean_cov(candidates)
    n = mean.shape[0]
    z = rng.standard_normal(n)
    if np.all(np.abs(cov) < 1e-300):
        return int(np.argmax(mean))
    for j in (1e-10,) + JITTER_LADDER[1:] + (1e-5, 1e-4):
        try:
            chol = np.linalg.cholesky(cov + j * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise PosteriorFactorizationError("posterior covariance over candidates is not PSD")
    return int(np.argmax(mean + chol @ z))


@dataclass(frozen=True)
class BanditDecision:
    action_index: int
    lower: np.ndarray
    upper: np.ndarray
    regret_estimate: np.ndarray
    info_gain: np.ndarray
    ratio: np.ndarray


def ids_select(posterior: GpPosterior, candidates, noise_variances, lambda_t, eps2=1e-5) -> BanditDecision:
    rho2 = np.asarray(noise_variances, dtype=np.float64)
    if np.any(rho2 <= 0):
        raise ContractViolation("noise variance at every candidate must be positive")
    mean, var = posterior.mean_var(candidates)
    return ids_from_moments(mean, var, rho2, lambda_t, eps2)


def ids_from_moments(mean, var, rho2, lambda_t, eps2) -> BanditDecision:
    sd = np.sqrt(var)
    lower = mean - lambda_t * sd
    upper = mean + lambda_t * sd
    delta = upper.max() - lower
    gain = np.log1p(var / rho2) + eps2
    ratio = delta * delta / gain
    return BanditDecision(int(np.argmin(ratio)), lower, upper, delta, gain, ratio)


# --- experiment ------------------------------------------------------------


@dataclass(frozen=True)
class HeteroFunction:
    """1-D test problem: smooth target plus a Gaussian-bump noise profile.

    ``target(x) = sum_i h_i exp(-(x - c_i)^2 / (2 w_i^2))`` and
    ``rho^2(x) = base + peak * exp(-(x - noise_center)^2 / (2 noise_width^2))``.
    """

    bumps: tuple = ((0.3, 1.0, 0.08), (0.72, 0.9, 0.06))
    noise_base: float = 0.01
    noise_peak: float = 4.0
    noise_center: float = 0.72
    noise_width: float = 0.06
    low: float = 0.0
    high: float = 1.0

    def target(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for c, h, w in self.bumps:
            out = out + h * np.exp(-0.5 * ((x - c) / w) ** 2)
        return out

    def noise_variance(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.noise_base + self.noise_peak * np.exp(-0.5 * ((x - self.noise_center) / self.noise_width) ** 2)


POLICIES = ("gp-ucb", "gp-ts", "gp-ids")


@dataclass(frozen=True)
class BanditRunConfig:
    steps: int = 100
    grid_size: int = 256
    kernel: Kernel = Kernel()
    problem: HeteroFunction = HeteroFunction()
    beta: float = 4.0
    lam: float = 1.0
    eps2: float = 1e-5
    jitter: float = 1e-10


def run_bandit(policy: str, seed: int, config: BanditRunConfig = BanditRunConfig(), trace=None):
    """Run one policy for ``config.steps`` evaluations.

    Returns a list of per-step dicts with keys step, policy, chosen_x,
    reward, instantaneous_regret, cumulative_regret.
    """
    if policy not in POLICIES:
        raise ContractViolation(f"unknown bandit policy {policy!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, POLICIES.index(policy)]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    prob = config.problem
    grid = np.linspace(prob.low, prob.high, config.grid_size)
    f_grid = prob.target(grid)
    rho2_grid = prob.noise_variance(grid)
    best = f_grid.max()
    xs, ys, ns = [], [], []
    cum = 0.0
    rows = []
    for t in range(config.steps):
        post = posterior_fit(xs, ys, ns, config.kernel, config.jitter)
        if policy == "gp-ucb":
            idx = ucb_select(post, grid, config.beta)
        elif policy == "gp-ts":
            idx = ts_select(post, grid, rng)
        else:
            dec = ids_select(post, grid, rho2_grid, config.lam, config.eps2)
            idx = dec.action_index
            if trace is not None:
                trace(t, dec)
        x = grid[idx]
        y = f_grid[idx] + np.sqrt(rho2_grid[idx]) * noise_rng.standard_normal()
        xs.append(x)
        ys.append(y)
        ns.append(rho2_grid[idx])
        inst = best - f_grid[idx]
        cum += inst
        rows.append(
            dict(step=t, policy=policy, chosen_x=x, reward=y, instantaneous_regret=inst, cumulative_regret=cum)
        )
    return rows
