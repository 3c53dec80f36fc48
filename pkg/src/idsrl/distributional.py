"""Return-distribution representations and their losses.

Two parameterizations are supported: a categorical distribution over a fixed
grid of equidistant atoms (C51) and a set of quantile values at fixed
fractions (QR).
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

QR_KAPPA = 1.0
# Var(Z) for quantile heads uses 1/M normalization.
QUANTILE_VARIANCE_DDOF = 0


@dataclass(frozen=True)
class CategoricalSupport:
    v_min: float
    v_max: float
    atom_count: int = 51
    atoms: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError(f"v_min must be < v_max, got [{self.v_min}, {self.v_max}]")
        if self.atom_count < 2:
            raise ValueError("atom_count must be at least 2")
        atoms = self.v_min + self.delta_z * np.arange(self.atom_count)
        atoms[-1] = self.v_max
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def delta_z(self) -> float:
        return (self.v_max - self.v_min) / (self.atom_count - 1)


@dataclass
class CategoricalReturn:
    support: CategoricalSupport
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape[-1] != self.support.atom_count:
            raise ValueError("probability vector length does not match support")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(-1), 1.0, atol=1e-9):
            raise ValueError("probabilities must be nonnegative and sum to 1")

    def mean(self):
        return categorical_mean(self.probs, self.support)

    def variance(self):
        return categorical_variance(self.probs, self.support)


@dataclass
class QuantileReturn:
    quantile_values: np.ndarray

    def __post_init__(self):
        self.quantile_values = np.asarray(self.quantile_values, dtype=np.float64)

    @property
    def quantile_count(self) -> int:
        return self.quantile_values.shape[-1]

    @property
    def fractions(self):
        return quantile_fractions(self.quantile_count)

    def mean(self):
        return self.quantile_values.mean(-1)

    def variance(self):
        return quantile_variance(self.quantile_values)


def quantile_fractions(m: int) -> np.ndarray:
    """Midpoint fractions ``(2j + 1) / (2M)`` for ``j = 0..M-1``."""
    return (2.0 * np.arange(m) + 1.0) / (2.0 * m)


def project_categorical(rewards, gammas, next_probs, support: CategoricalSupport):
    """Project ``r + gamma * Z'`` back onto ``support``.

    Each shifted atom is clamped into ``[v_min, v_max]`` and its mass split
    linearly between the two neighbouring atoms; an exact hit assigns all
    mass to one atom. Terminal rows should pass ``gamma = 0``.

    Parameters
    ----------
    rewards, gammas : array_like, shape (B,)
    next_probs : array_like, shape (B, N)

    Returns
    -------
    ndarray, shape (B, N)
    """
    rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
    gammas = np.broadcast_to(np.asarray(gammas, dtype=np.float64), rewards.shape)
    next_probs = np.atleast_2d(np.asarray(next_probs, dtype=np.float64))
    if next_probs.shape != (rewards.shape[0], support.atom_count):
        raise ValueError(
            f"next_probs shape {next_probs.shape} does not match "
            f"({rewards.shape[0]}, {support.atom_count})"
        )
    return _kernels.project_categorical(
        rewards, gammas, next_probs, float(support.v_min), float(support.v_max)
    )


def categorical_mean(probs, support: CategoricalSupport):
    return np.asarray(probs) @ support.atoms


def categorical_variance(probs, support: CategoricalSupport):
    probs = np.asarray(probs)
    mean = probs @ support.atoms
    dev = support.atoms - np.expand_dims(mean, -1)
    return np.sum(probs * dev * dev, axis=-1)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def categorical_kl_loss_grad(logits, target_probs):
    """Cross-entropy of ``target_probs`` against ``softmax(logits)``.

    Works row-wise on arrays of shape (..., N) and returns the per-row loss
    together with the gradient with respect to the logits. The cross-entropy
    differs from the KL divergence only by the (constant) target entropy.
    """
    logp = log_softmax(logits)
    target = np.asarray(target_probs, dtype=np.float64)
    loss = -np.sum(target * logp, axis=-1)
    grad = np.exp(logp) - target
    return loss, grad


def quantile_huber_loss_grad(pred_quantiles, target_samples, kappa=QR_KAPPA):
    """Asymmetric Huber quantile loss and its gradient.

    For predictions ``theta_j`` at fractions ``tau_j`` and target samples
    ``T_i`` the loss is ``sum_j mean_i |tau_j - 1{u_ij < 0}| * H_k(u_ij) / k``
    with ``u_ij = T_i - theta_j``. Leading batch dimensions are allowed; the
    quantile axis is last.

    Returns
    -------
    loss : ndarray, shape (...)
    grad : ndarray, same shape as ``pred_quantiles``
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    pred = np.asarray(pred_quantiles, dtype=np.float64)
    target = np.asarray(target_samples, dtype=np.float64)
    tau = quantile_fractions(pred.shape[-1])
    u = target[..., None, :] - pred[..., :, None]  # (..., M, M')
    abs_u = np.abs(u)
    quad = abs_u <= kappa
    huber = np.where(quad, 0.5 * u * u, kappa * (abs_u - 0.5 * kappa))
    weight = np.abs(tau[:, None] - (u < 0))
    loss = np.sum(np.mean(weight * huber / kappa, axis=-1), axis=-1)
    dhuber_du = np.where(quad, u, kappa * np.sign(u))
    grad = -np.mean(weight * dhuber_du / kappa, axis=-1)
    return loss, grad


def quantile_variance(quantiles):
    q = np.asarray(quantiles, dtype=np.float64)
    if q.shape[-1] < 2:
        raise ValueError("need at least two quantiles")
    return np.var(q, axis=-1, ddof=QUANTILE_VARIANCE_DDOF)
