"""Pure numpy implementations of the hot kernels.

These mirror the compiled versions in ``_core.pyx`` argument for argument and
are used whenever the extension is unavailable (or ``IDSRL_PURE_PYTHON=1``).
"""

import numpy as np

RATIO = 0
ADDITIVE = 1


def project_categorical(rewards, gammas, next_probs, v_min, v_max):
    rewards = np.asarray(rewards, dtype=np.float64)
    gammas = np.asarray(gammas, dtype=np.float64)
    next_probs = np.asarray(next_probs, dtype=np.float64)
    batch, n_atoms = next_probs.shape
    delta_z = (v_max - v_min) / (n_atoms - 1)
    atoms = v_min + delta_z * np.arange(n_atoms)

    shifted = rewards[:, None] + gammas[:, None] * atoms[None, :]
    shifted = np.clip(shifted, v_min, v_max)
    pos = (shifted - v_min) / delta_z
    lo = np.floor(pos)
    hi = np.ceil(pos)
    exact = lo == hi
    lo_w = np.where(exact, 1.0, hi - pos)
    hi_w = np.where(exact, 0.0, pos - lo)
    lo_i = np.clip(lo.astype(np.int64), 0, n_atoms - 1)
    hi_i = np.clip(hi.astype(np.int64), 0, n_atoms - 1)

    rows = np.arange(batch)[:, None] * n_atoms
    flat = np.bincount(
        (rows + lo_i).ravel(), weights=(next_probs * lo_w).ravel(), minlength=batch * n_atoms
    )
    flat += np.bincount(
        (rows + hi_i).ravel(), weights=(next_probs * hi_w).ravel(), minlength=batch * n_atoms
    )
    return flat.reshape(batch, n_atoms)


def ids_scores(q, var_z, lam, eps1, eps2, rho2_floor, rho2_const, mode, beta):
    """Run one inner step of the IDS decision for a single state.

    ``q`` has shape (K, A). When ``rho2_const > 0`` it replaces the
    distribution-derived noise variance and ``var_z`` is ignored.
    Returns (mu, sigma2, delta, rho2, gain, psi, action).
    """
    q = np.asarray(q, dtype=np.float64)
    mu = q.mean(axis=0)
    sigma2 = ((q - mu) ** 2).mean(axis=0)
    sigma = np.sqrt(sigma2)
    delta = np.max(mu + lam * sigma) - (mu - lam * sigma)
    if rho2_const > 0.0:
        rho2 = np.full(mu.shape, rho2_const)
    else:
        var_z = np.asarray(var_z, dtype=np.float64)
        rho2 = var_z / (eps1 + var_z.mean())
        rho2 = np.maximum(rho2, rho2_floor)
    gain = np.log1p(sigma2 / rho2) + eps2
    if mode == RATIO:
        psi = delta * delta / gain
    else:
        psi = delta * delta - beta * gain
    return mu, sigma2, delta, rho2, gain, psi, int(np.argmin(psi))
