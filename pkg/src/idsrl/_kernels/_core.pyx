# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: categorical projection and the per-step IDS decision."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt, log1p

cnp.import_array()

RATIO = 0
ADDITIVE = 1
cdef int _RATIO = 0


def project_categorical(rewards, gammas, next_probs, double v_min, double v_max):
    cdef const double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(gammas, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(next_probs, dtype=np.float64)
    cdef Py_ssize_t batch = p.shape[0]
    cdef Py_ssize_t n_atoms = p.shape[1]
    out_arr = np.zeros((batch, n_atoms), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double delta_z = (v_max - v_min) / (n_atoms - 1)
    cdef Py_ssize_t b, j, lo_i, hi_i
    cdef double tz, pos, lo, hi, mass

    for b in range(batch):
        for j in range(n_atoms):
            mass = p[b, j]
            tz = r[b] + g[b] * (v_min + delta_z * j)
            if tz < v_min:
                tz = v_min
            elif tz > v_max:
                tz = v_max
            pos = (tz - v_min) / delta_z
            lo = floor(pos)
            hi = ceil(pos)
            lo_i = <Py_ssize_t>lo
            hi_i = <Py_ssize_t>hi
            if lo_i < 0:
                lo_i = 0
            if hi_i > n_atoms - 1:
                hi_i = n_atoms - 1
            if lo == hi:
                out[b, lo_i] += mass
            else:
                out[b, lo_i] += mass * (hi - pos)
                out[b, hi_i] += mass * (pos - lo)
    return out_arr


def ids_scores(q, var_z, double lam, double eps1, double eps2, double rho2_floor,
               double rho2_const, int mode, double beta):
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n_heads = qv.shape[0]
    cdef Py_ssize_t n_act = qv.shape[1]
    cdef const double[::1] vz
    mu_a = np.empty(n_act)
    s2_a = np.empty(n_act)
    d_a = np.empty(n_act)
    r2_a = np.empty(n_act)
    g_a = np.empty(n_act)
    psi_a = np.empty(n_act)
    cdef double[::1] mu = mu_a, s2 = s2_a, delta = d_a, rho2 = r2_a, gain = g_a, psi = psi_a
    cdef Py_ssize_t k, a, best = 0
    cdef double acc, diff, upper, mean_var, best_psi

    for a in range(n_act):
        acc = 0.0
        for k in range(n_heads):
            acc += qv[k, a]
        mu[a] = acc / n_heads
        acc = 0.0
        for k in range(n_heads):
            diff = qv[k, a] - mu[a]
            acc += diff * diff
        s2[a] = acc / n_heads

    upper = mu[0] + lam * sqrt(s2[0])
    for a in range(1, n_act):
        acc = mu[a] + lam * sqrt(s2[a])
        if acc > upper:
            upper = acc
    for a in range(n_act):
        delta[a] = upper - (mu[a] - lam * sqrt(s2[a]))

    if rho2_const > 0.0:
        for a in range(n_act):
            rho2[a] = rho2_const
    else:
        vz = np.ascontiguousarray(var_z, dtype=np.float64)
        mean_var = 0.0
        for a in range(n_act):
            mean_var += vz[a]
        mean_var /= n_act
        for a in range(n_act):
            rho2[a] = vz[a] / (eps1 + mean_var)
            if rho2[a] < rho2_floor:
                rho2[a] = rho2_floor

    for a in range(n_act):
        gain[a] = log1p(s2[a] / rho2[a]) + eps2
        if mode == _RATIO:
            psi[a] = delta[a] * delta[a] / gain[a]
        else:
            psi[a] = delta[a] * delta[a] - beta * gain[a]
        if a == 0 or psi[a] < best_psi:
            best_psi = psi[a]
            best = a
    return mu_a, s2_a, d_a, r2_a, g_a, psi_a, int(best)
