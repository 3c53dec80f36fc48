"""Shared-trunk ensemble network with K bootstrap Q-heads and a distributional head.

Everything is plain numpy with hand-written backpropagation. The trunk maps a
state encoding to features ``phi(s)``; every Q-head and the distributional
head read ``phi(s)``. Two routing rules are applied in ``backward``:

* gradients flowing from the Q-heads into the trunk are averaged over heads
  (``scale_heads_by_inv_k``);
* the distributional head can be cut off from the trunk
  (``stop_dist_into_trunk``), so its features are learned only from the
  bootstrap branch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"IDSNET\x00\x01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    action_count: int
    n_heads: int = 10
    trunk_widths: tuple = (64, 64)
    head_width: int = 32
    dist_outputs: int = 51  # atoms for C51, quantiles for QR; 0 disables the head
    dist_width: int = 32

    def __post_init__(self):
        if self.input_dim < 1 or self.action_count < 1 or self.n_heads < 1:
            raise ValueError(f"invalid network shape {self}")
        object.__setattr__(self, "trunk_widths", tuple(self.trunk_widths))


def _param_specs(shape: NetworkShape):
    specs = []
    prev = shape.input_dim
    for i, width in enumerate(shape.trunk_widths):
        specs.append((f"trunk.W{i}", (prev, width), prev))
        specs.append((f"trunk.b{i}", (width,), prev))
        prev = width
    feat = prev
    k, a, h = shape.n_heads, shape.action_count, shape.head_width
    specs += [
        ("heads.W0", (k, feat, h), feat),
        ("heads.b0", (k, h), feat),
        ("heads.W1", (k, h, a), h),
        ("heads.b1", (k, a), h),
    ]
    if shape.dist_outputs:
        d = shape.dist_width
        specs += [
            ("dist.W0", (feat, d), feat),
            ("dist.b0", (d,), feat),
            ("dist.W1", (d, a * shape.dist_outputs), d),
            ("dist.b1", (a * shape.dist_outputs,), d),
        ]
    return specs


@dataclass
class ForwardCache:
    x: np.ndarray
    trunk_pre: list
    trunk_act: list
    head_hidden: np.ndarray
    dist_hidden: np.ndarray | None
    params_id: int


@dataclass
class EnsembleNetwork:
    shape: NetworkShape
    params: dict
    target_params: dict
    sync_count: int = 0
    _version: int = field(default=0, repr=False)

    @property
    def n_heads(self):
        return self.shape.n_heads

    def parameter_names(self):
        return [name for name, _, _ in _param_specs(self.shape)]

    def forward(self, states, use_target=False, with_cache=False):
        """Evaluate the network on a batch of encoded states.

        Returns ``(q_values, dist_outputs)`` with shapes (K, B, A) and
        (B, A, N); ``dist_outputs`` is ``None`` without a distributional head.
        With ``with_cache=True`` a third element holds what ``backward`` needs.
        """
        p = self.target_params if use_target else self.params
        x = np.asarray(states, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("states must be a nonempty (B, input_dim) array")
        pre, act = [], [x]
        h = x
        for i in range(len(self.shape.trunk_widths)):
            z = h @ p[f"trunk.W{i}"] + p[f"trunk.b{i}"]
            h = np.maximum(z, 0.0)
            pre.append(z)
            act.append(h)
        phi = h
        hz = phi @ p["heads.W0"] + p["heads.b0"][:, None, :]
        hh = np.maximum(hz, 0.0)
        q = hh @ p["heads.W1"] + p["heads.b1"][:, None, :]
        dist = None
        dh = None
        if self.shape.dist_outputs:
            dz = phi @ p["dist.W0"] + p["dist.b0"]
            dh = np.maximum(dz, 0.0)
            dist = (dh @ p["dist.W1"] + p["dist.b1"]).reshape(
                x.shape[0], self.shape.action_count, self.shape.dist_outputs
            )
        if not with_cache:
            return q, dist
        cache = ForwardCache(x, pre, act, hh, dh, id(p) ^ self._version)
        return q, dist, cache

    def backward(
        self,
        cache: ForwardCache,
        grad_q,
        grad_dist=None,
        stop_dist_into_trunk=True,
        scale_heads_by_inv_k=True,
    ):
        """Backpropagate output gradients to the online parameters.

        ``grad_q`` is dL/dQ with shape (K, B, A); ``grad_dist`` is dL/d(dist
        outputs) with shape (B, A, N) or ``None``. Returns a dict of gradients
        keyed like ``params``. Target parameters never receive gradients.
        """
        if cache.params_id != id(self.params) ^ self._version:
            raise RuntimeError("backward called with a cache from a different forward pass")
        p = self.params
        grads = {}
        phi = cache.trunk_act[-1]
        hh = cache.head_hidden
        grad_q = np.asarray(grad_q, dtype=np.float64)
        if grad_q.shape != hh.shape[:2] + (self.shape.action_count,):
            raise ValueError(f"grad_q has shape {grad_q.shape}")

        grads["heads.W1"] = hh.transpose(0, 2, 1) @ grad_q
        grads["heads.b1"] = grad_q.sum(axis=1)
        g_hh = (grad_q @ p["heads.W1"].transpose(0, 2, 1)) * (hh > 0)
        grads["heads.W0"] = phi.T @ g_hh
        grads["heads.b0"] = g_hh.sum(axis=1)
        g_phi = (g_hh @ p["heads.W0"].transpose(0, 2, 1)).sum(axis=0)
        if scale_heads_by_inv_k:
            g_phi = g_phi / self.shape.n_heads

        if self.shape.dist_outputs:
            dh = cache.dist_hidden
            if grad_dist is None:
                gd = np.zeros((phi.shape[0], p["dist.b1"].shape[0]))
            else:
                gd = np.asarray(grad_dist, dtype=np.float64).reshape(phi.shape[0], -1)
            grads["dist.W1"] = dh.T @ gd
            grads["dist.b1"] = gd.sum(axis=0)
            g_dh = (gd @ p["dist.W1"].T) * (dh > 0)
            grads["dist.W0"] = phi.T @ g_dh
            grads["dist.b0"] = g_dh.sum(axis=0)
            if not stop_dist_into_trunk:
                g_phi = g_phi + g_dh @ p["dist.W0"].T
        elif grad_dist is not None:
            raise ValueError("network has no distributional head")

        g = g_phi
        for i in reversed(range(len(self.shape.trunk_widths))):
            g = g * (cache.trunk_pre[i] > 0)
            grads[f"trunk.W{i}"] = cache.trunk_act[i].T @ g
            grads[f"trunk.b{i}"] = g.sum(axis=0)
            if i > 0:
                g = g @ p[f"trunk.W{i}"].T
        return grads

    def apply_update(self, new_params):
        self.params = new_params
        self._version += 1

    def sync_target(self):
        """Copy the online parameters into the frozen target copy."""
        self.target_params = {k: v.copy() for k, v in self.params.items()}
        self.sync_count += 1

    def copy(self):
        return EnsembleNetwork(
            self.shape,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.target_params.items()},
            self.sync_count,
        )


def init_network(shape: NetworkShape, rng, init_scale=1.0, head_scale=1.0, zero_bias=False) -> EnsembleNetwork:
    """Scaled uniform fan-in initialization.

    Weights are drawn from ``U(-c / sqrt(fan_in), c / sqrt(fan_in))`` with
    ``c = init_scale`` (times ``head_scale`` for the Q-heads). Biases use the
    same rule unless ``zero_bias``. Each Q-head draws from its own spawned
    stream, so heads are independent of each other and of the trunk.
    ``init_scale=0`` gives an all-zero net.
    """
    seed_seq = _seed_sequence(rng)
    trunk_ss, dist_ss, *head_ss = seed_seq.spawn(2 + shape.n_heads)
    trunk_rng = np.random.default_rng(trunk_ss)
    dist_rng = np.random.default_rng(dist_ss)
    head_rngs = [np.random.default_rng(s) for s in head_ss]

    params = {}
    for name, dims, fan_in in _param_specs(shape):
        bound = init_scale / np.sqrt(fan_in)
        if zero_bias and ".b" in name:
            params[name] = np.zeros(dims)
            continue
        if name.startswith("heads."):
            bound *= head_scale
            arr = np.stack([r.uniform(-bound, bound, size=dims[1:]) for r in head_rngs])
        elif name.startswith("dist."):
            arr = dist_rng.uniform(-bound, bound, size=dims)
        else:
            arr = trunk_rng.uniform(-bound, bound, size=dims)
        params[name] = arr
    target = {k: v.copy() for k, v in params.items()}
    return EnsembleNetwork(shape, params, target)


def _seed_sequence(rng):
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(0, 2**63 - 1)))
    return np.random.SeedSequence(rng)


@dataclass
class AdamState:
    alpha: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 0.01 / 32
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update. Returns new parameter arrays."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    updated = {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = w
            continue
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        updated[name] = w - state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return updated


# Checkpoint layout (little endian):
#   magic (8 bytes) | version u32 | n_arrays u32
#   per array: name_len u16 | name utf-8 | ndim u8 | dims u32 * ndim
#   then all arrays' float64 data back to back, online params first,
#   target params second, in header order.
def save_checkpoint(network: EnsembleNetwork, path):
    names = network.parameter_names()
    header = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(names))]
    for name in names:
        raw = name.encode()
        dims = network.params[name].shape
        header.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(dims)))
        header.append(struct.pack(f"<{len(dims)}I", *dims))
    with open(path, "wb") as fh:
        fh.write(b"".join(header))
        for store in (network.params, network.target_params):
            for name in names:
                fh.write(np.ascontiguousarray(store[name], dtype="<f8").tobytes())


def load_checkpoint(path, shape: NetworkShape) -> EnsembleNetwork:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    layout = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        layout.append((name, tuple(dims)))
    expected = [(n, d) for n, d, _ in _param_specs(shape)]
    if layout != expected:
        raise ValueError("checkpoint layout does not match the requested network shape")
    stores = []
    for _ in range(2):
        store = {}
        for name, dims in layout:
            n = int(np.prod(dims))
            store[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims).copy()
            off += 8 * n
        stores.append(store)
    return EnsembleNetwork(shape, stores[0], stores[1])
