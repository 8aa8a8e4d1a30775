"""Fourier-feature MLP signed-distance network with hand-written derivatives.

The network maps a point ``p`` to ``d_max * tanh(o)`` where ``o`` is the output
of an MLP over the random Fourier embedding of the normalized coordinates
``u = (p - center) / scale``. Softplus hidden layers; the embedding is also
concatenated onto the input of ``skip_layer``.

Spatial Jacobians are propagated in forward mode alongside the primal pass
(three tangent rows per point). Parameter gradients of losses that depend on
both the value and the Jacobian are obtained by reverse mode over that
combined pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .io import read_container, write_container


@dataclass
class NetworkConfig:
    n_layers: int = 8
    width: int = 512
    n_features: int = 9
    sigma_ff: float = 4.0
    beta: float = 100.0
    skip_layer: int | None = 4
    init: str = "fan_in"

    def __post_init__(self):
        if self.n_layers < 1 or self.width < 1 or self.n_features < 1:
            raise ConfigError("network layers, width and features must be positive")
        if self.init not in ("fan_in", "standard"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.beta <= 0 or self.sigma_ff <= 0:
            raise ConfigError("beta and sigma_ff must be positive")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown network keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class SdfNetwork:
    config: NetworkConfig
    B: np.ndarray
    weights: list
    biases: list
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    d_max: float = 1.0
    seed: int = 0

    @property
    def skip(self):
        s = self.config.skip_layer
        return s if s is not None and 0 < s < self.config.n_layers else None

    @property
    def params(self):
        """Trainable arrays in checkpoint order: W_0, b_0, W_1, b_1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return SdfNetwork(
            self.config, self.B.copy(), [w.copy() for w in self.weights],
            [b.copy() for b in self.biases], self.center.copy(), self.scale, self.d_max, self.seed,
        )

    def __call__(self, p):
        return forward(self, p)

    def forward(self, p):
        return forward(self, p)

    def jacobian(self, p):
        return jacobian(self, p)

    def value_and_jacobian(self, p):
        return value_and_jacobian(self, p)


def layer_shapes(config):
    emb = 2 * config.n_features
    skip = config.skip_layer if config.skip_layer is not None and 0 < config.skip_layer < config.n_layers else None
    shapes = []
    fan_in = emb
    for layer in range(config.n_layers):
        if layer == skip:
            fan_in += emb
        shapes.append((config.width, fan_in))
        fan_in = config.width
    shapes.append((1, fan_in))
    return shapes


def init_network(config=None, seed=0, bounds=None, d_max=None):
    """Random network; ``bounds`` fixes the coordinate normalization and ``d_max``.

    Weights and biases are i.i.d. ``N(0, 1/fan_in)`` (``init="fan_in"``) or
    ``N(0, 1)`` (``init="standard"``). Fourier rows are ``N(0, sigma_ff^2)`` drawn
    from their own stream, so a net with more features extends the rows of one
    with fewer under the same seed.
    """
    if config is None:
        config = NetworkConfig()
    elif isinstance(config, dict):
        config = NetworkConfig.from_dict(config)
    B = np.random.default_rng([seed, 1]).standard_normal((config.n_features, 3)) * config.sigma_ff
    rng = np.random.default_rng([seed, 2])
    weights, biases = [], []
    for out_dim, in_dim in layer_shapes(config):
        std = 1.0 / math.sqrt(in_dim) if config.init == "fan_in" else 1.0
        weights.append(rng.standard_normal((out_dim, in_dim)) * std)
        biases.append(rng.standard_normal(out_dim) * std)
    if bounds is None:
        bounds = (-np.ones(3), np.ones(3))
    lo, hi = (np.asarray(b, float) for b in bounds)
    center = (lo + hi) / 2
    scale = float(np.max(hi - lo)) / 2
    if d_max is None:
        d_max = 0.5 * float(np.linalg.norm(hi - lo))
    return SdfNetwork(config, B, weights, biases, center, scale, float(d_max), seed)


def _softplus(h, beta):
    return _softplus_sigmoid(h, beta)[0]


def _softplus_sigmoid(h, beta):
    """``softplus_beta(h)`` and ``sigmoid(beta h)`` sharing one exponential."""
    bh = beta * h
    e = np.exp(-np.abs(bh))
    sp = (np.maximum(bh, 0.0) + np.log1p(e)) / beta
    r = 1.0 / (1.0 + e)
    sg = np.where(bh >= 0, r, e * r)
    return sp, sg


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_points(p):
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 3:
        raise ValueError("points must have 3 coordinates")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite input points")
    return p, single


def _rowwise(x, w):
    # Fixed per-row summation order: results do not depend on the batch size.
    return np.einsum("nd,wd->nw", x, w, optimize=False)


def embed(net, p):
    """Fourier features ``[cos(2 pi B u), sin(2 pi B u)]`` of normalized points."""
    p, single = _check_points(p)
    z = 2 * np.pi * ((p - net.center) / net.scale) @ net.B.T
    e = np.concatenate([np.cos(z), np.sin(z)], axis=1)
    return e[0] if single else e


def forward(net, p):
    """Signed distance values, ``d_max * tanh(...)``."""
    p, single = _check_points(p)
    z = 2 * np.pi * np.einsum("nd,fd->nf", (p - net.center) / net.scale, net.B, optimize=False)
    e = np.concatenate([np.cos(z), np.sin(z)], axis=1)
    x = e
    beta = net.config.beta
    n_hidden = len(net.weights) - 1
    for layer in range(n_hidden):
        if layer == net.skip:
            x = np.concatenate([x, e], axis=1)
        x = _softplus(_rowwise(x, net.weights[layer]) + net.biases[layer], beta)
    o = _rowwise(x, net.weights[-1])[:, 0] + net.biases[-1][0]
    f = net.d_max * np.tanh(o)
    return f[0] if single else f


def _tangent_pass(net, p, matmul):
    """Primal + 3 tangent rows through the network.

    Returns ``(f, J, cache)``; ``cache`` holds what the reverse pass needs.
    """
    n = p.shape[0]
    u = (p - net.center) / net.scale
    z = 2 * np.pi * matmul(u, net.B)  # (n, F)
    c, s = np.cos(z), np.sin(z)
    dz = (2 * np.pi / net.scale) * net.B.T  # (3, F): dz/dp_k
    e_all = np.empty((4, n, 2 * z.shape[1]))
    e_all[0] = np.concatenate([c, s], axis=1)
    e_all[1:] = np.concatenate([-s[None] * dz[:, None, :], c[None] * dz[:, None, :]], axis=2)

    beta = net.config.beta
    x_all = e_all
    inputs, sig = [], []
    n_hidden = len(net.weights) - 1
    for layer in range(n_hidden):
        if layer == net.skip:
            x_all = np.concatenate([x_all, e_all], axis=2)
        inputs.append(x_all)
        h_all = matmul(x_all.reshape(4 * n, -1), net.weights[layer]).reshape(4, n, -1)
        h_all[0] += net.biases[layer]
        a_all = np.empty_like(h_all)
        a_all[0], sg = _softplus_sigmoid(h_all[0], beta)
        sig.append((sg, h_all[1:]))
        a_all[1:] = sg[None] * h_all[1:]
        x_all = a_all
    inputs.append(x_all)
    o_all = matmul(x_all.reshape(4 * n, -1), net.weights[-1]).reshape(4, n)
    o = o_all[0] + net.biases[-1][0]
    t = np.tanh(o)
    sech2 = 1.0 - t * t
    f = net.d_max * t
    J = (net.d_max * sech2)[:, None] * o_all[1:].T
    cache = {"inputs": inputs, "sig": sig, "t": t, "sech2": sech2, "o_dot": o_all[1:], "n": n}
    return f, J, cache


def _blas(x, w):
    return x @ w.T


def value_and_jacobian(net, p):
    """``(f, J)`` with ``J = df/dp`` of shape ``(n, 3)``."""
    p, single = _check_points(p)
    f, J, _ = _tangent_pass(net, p, _rowwise)
    return (f[0], J[0]) if single else (f, J)


def jacobian(net, p):
    return value_and_jacobian(net, p)[1]


def forward_train(net, p):
    """Value, Jacobian and reverse-mode cache (BLAS matmuls)."""
    p, _ = _check_points(p)
    return _tangent_pass(net, p, _blas)


def zeros_like_params(net):
    return [np.zeros_like(a) for a in net.params]


def backward(net, cache, f_bar, J_bar, grads=None):
    """Accumulate ``dL/dparams`` for upstream ``f_bar = dL/df`` and ``J_bar = dL/dJ``.

    ``grads`` (same layout as ``net.params``) is added to in place and returned.
    """
    n = cache["n"]
    f_bar = np.asarray(f_bar, dtype=float).reshape(-1)
    J_bar = np.asarray(J_bar, dtype=float).reshape(-1, 3)
    if f_bar.shape[0] != n or J_bar.shape[0] != n:
        raise ValueError("upstream sensitivities do not match the cached batch")
    if not (np.all(np.isfinite(f_bar)) and np.all(np.isfinite(J_bar))):
        raise ValueError("non-finite upstream sensitivities")
    if grads is None:
        grads = zeros_like_params(net)
    D = net.d_max
    t, sech2, o_dot = cache["t"], cache["sech2"], cache["o_dot"]
    g_all = np.empty((4, n))
    # J_k = D sech2(o) o_dot_k ; f = D tanh(o)
    g_all[0] = D * sech2 * (f_bar - 2.0 * t * np.einsum("nk,kn->n", J_bar, o_dot))
    g_all[1:] = (D * sech2)[None, :] * J_bar.T
    beta = net.config.beta
    n_hidden = len(net.weights) - 1
    emb = net.B.shape[0] * 2
    upstream = g_all.reshape(4 * n, 1)
    for layer in range(n_hidden, -1, -1):
        x_all = cache["inputs"][layer]
        w = net.weights[layer]
        grads[2 * layer] += upstream.T @ x_all.reshape(4 * n, -1)
        grads[2 * layer + 1] += upstream[:n].sum(axis=0)
        if layer == 0:
            break
        x_bar = (upstream @ w).reshape(4, n, -1)
        if layer == net.skip:
            x_bar = x_bar[:, :, : x_bar.shape[2] - emb]
        sg, h_dot = cache["sig"][layer - 1]
        h_bar = np.empty_like(x_bar)
        curv = beta * sg * (1.0 - sg)
        h_bar[0] = x_bar[0] * sg + curv * (x_bar[1] * h_dot[0] + x_bar[2] * h_dot[1]
                                           + x_bar[3] * h_dot[2])
        h_bar[1:] = x_bar[1:] * sg[None]
        upstream = h_bar.reshape(4 * n, -1)
    return grads


def num_params(net):
    return sum(a.size for a in net.params)


def flat_params(net):
    return np.concatenate([a.ravel() for a in net.params])


def set_flat_params(net, vec):
    vec = np.asarray(vec, dtype=float)
    offset = 0
    for a in net.params:
        a[...] = vec[offset:offset + a.size].reshape(a.shape)
        offset += a.size


def save_network(path, net, **extra):
    """Checkpoint: header + blob ``[B, W_0, b_0, ..., W_L, b_L]`` (C order)."""
    header = {
        "format": "sartomo.sdfnet/1",
        "architecture": net.config.to_dict(),
        "layout": ["B"] + [f"{k}_{i}" for i in range(len(net.weights)) for k in ("W", "b")],
        "seed": net.seed,
        "d_max": net.d_max,
        "center": net.center.tolist(),
        "scale": net.scale,
        **extra,
    }
    write_container(path, header, [net.B] + net.params)


def load_network(path):
    header, arrays = read_container(path)
    config = NetworkConfig.from_dict(header["architecture"])
    B, rest = arrays[0], arrays[1:]
    net = SdfNetwork(
        config, B, [a.copy() for a in rest[0::2]], [a.copy() for a in rest[1::2]],
        np.asarray(header["center"], float), float(header["scale"]), float(header["d_max"]),
        int(header["seed"]),
    )
    return net, header
