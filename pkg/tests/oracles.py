"""Independent reference implementations used as test oracles.

Everything here is written as plain loops over scalars (``math`` / ``cmath``)
so that it shares no vectorized code path with the package.
"""
from __future__ import annotations

import cmath
import math

import numpy as np

C = 299_792_458.0


def steering_scalar(p, f, theta, phi, c=C):
    x, y, z = (float(v) for v in p)
    proj = x * math.cos(phi) * math.cos(theta) + y * math.sin(theta) * math.cos(phi) + z * math.sin(phi)
    return cmath.exp(-1j * 4.0 * math.pi * f / c * proj)


def simulate_loop(positions, coeffs, geom):
    """Triple loop over (frequency, pulse, pass) and scatterers."""
    nf, npul, nel = geom.shape
    out = np.zeros((nf, npul, nel), complex)
    for i in range(nf):
        for j in range(npul):
            for e in range(nel):
                m = geom.subaperture[j, e]
                acc = 0j
                for k in range(len(positions)):
                    acc += coeffs[k, m] * steering_scalar(
                        positions[k], geom.frequencies[i], geom.theta[j, e], geom.phi[j, e], geom.c)
                out[i, j, e] = acc
    return out


def direct_forward(values, grid, geom, m):
    """Exact sum over voxels of value times steering phase, sample order (i, member)."""
    members = np.argwhere(geom.subaperture == m)
    centers = grid.centers()
    flat = np.asarray(values).ravel()
    nz = np.flatnonzero(flat)
    out = np.zeros((geom.n_frequencies, len(members)), complex)
    for i, f in enumerate(geom.frequencies):
        for n, (j, e) in enumerate(members):
            acc = 0j
            for v in nz:
                acc += flat[v] * steering_scalar(centers[v], f, geom.theta[j, e], geom.phi[j, e], geom.c)
            out[i, n] = acc
    return out


def softplus_scalar(h, beta):
    z = beta * h
    return (z + math.log1p(math.exp(-z))) / beta if z > 0 else math.log1p(math.exp(z)) / beta


def sigmoid_scalar(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def network_scalar_grad(net, p):
    """Value and spatial gradient of one point, carrying three tangents by hand."""
    u = [(p[k] - net.center[k]) / net.scale for k in range(3)]
    F = net.B.shape[0]
    x, dx = [], []
    zs = [2 * math.pi * sum(net.B[r, k] * u[k] for k in range(3)) for r in range(F)]
    dzs = [[2 * math.pi * net.B[r, k] / net.scale for k in range(3)] for r in range(F)]
    for r in range(F):
        x.append(math.cos(zs[r]))
        dx.append([-math.sin(zs[r]) * d for d in dzs[r]])
    for r in range(F):
        x.append(math.sin(zs[r]))
        dx.append([math.cos(zs[r]) * d for d in dzs[r]])
    emb, demb = list(x), [list(d) for d in dx]
    beta = net.config.beta
    for layer in range(len(net.weights) - 1):
        if layer == net.skip:
            x, dx = x + emb, dx + demb
        W, b = net.weights[layer], net.biases[layer]
        nx, ndx = [], []
        for r in range(W.shape[0]):
            h = sum(W[r, c] * x[c] for c in range(len(x))) + b[r]
            dh = [sum(W[r, c] * dx[c][k] for c in range(len(x))) for k in range(3)]
            s = sigmoid_scalar(beta * h)
            nx.append(softplus_scalar(h, beta))
            ndx.append([s * d for d in dh])
        x, dx = nx, ndx
    W, b = net.weights[-1], net.biases[-1]
    o = sum(W[0, c] * x[c] for c in range(len(x))) + b[0]
    do = [sum(W[0, c] * dx[c][k] for c in range(len(x))) for k in range(3)]
    t = math.tanh(o)
    return net.d_max * t, [net.d_max * (1 - t * t) * d for d in do]


def network_scalar(net, p):
    """Straight-line evaluation of one point through the network."""
    return network_scalar_grad(net, p)[0]


def richardson_gradient(fun, x, h):
    """Central differences at ``h`` and ``h/2`` combined to fourth order."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        def cd(step):
            xp, xm = x.copy(), x.copy()
            xp[idx] += step
            xm[idx] -= step
            return (fun(xp) - fun(xm)) / (2 * step)
        g[idx] = (4 * cd(h / 2) - cd(h)) / 3
    return g


def chamfer_bruteforce(a, b):
    def directed(x, y):
        total = 0.0
        for p in x:
            total += min(math.dist(p, q) for q in y)
        return total / len(x)
    return 0.5 * (directed(a, b) + directed(b, a))


def loss_terms_scalar(net, P, NP, Q, NQ, Qb, w):
    """Six loss terms re-computed point by point."""
    def val_grad(p):
        return network_scalar_grad(net, p)

    def absdot(g, n):
        ng = math.sqrt(sum(v * v for v in g))
        nn = math.sqrt(sum(v * v for v in n))
        return abs(sum(a * b for a, b in zip(g, n))) / (ng * nn)

    on = [val_grad(p) for p in P]
    iso = [val_grad(q) for q in Q]
    bg = [val_grad(q) for q in Qb]
    t = {
        "on_sdf": sum(abs(f) for f, _ in on) / len(on),
        "normal": sum(1 - absdot(g, n) for (_, g), n in zip(on, NP)) / len(on),
        "iso_sdf": sum(abs(f) for f, _ in iso) / len(iso),
        "iso_normal": sum(1 - absdot(g, n) for (_, g), n in zip(iso, NQ)) / len(iso),
        "off_sdf": sum(math.exp(-w.alpha_off * abs(f)) for f, _ in bg) / len(bg),
        "eikonal": sum(abs(1 - math.sqrt(sum(v * v for v in g))) for _, g in iso + bg) / len(iso + bg),
    }
    return t


def network_value_mp(net, p, dps=40):
    """Forward pass in ``dps``-digit arithmetic (no float64 cancellation in differences)."""
    import mpmath as mp

    with mp.workdps(dps):
        u = [(mp.mpf(p[k]) - mp.mpf(net.center[k])) / mp.mpf(net.scale) for k in range(3)]
        F = net.B.shape[0]
        zs = [2 * mp.pi * mp.fsum(mp.mpf(net.B[r, k]) * u[k] for k in range(3)) for r in range(F)]
        emb = [mp.cos(z) for z in zs] + [mp.sin(z) for z in zs]
        x = list(emb)
        beta = mp.mpf(net.config.beta)
        for layer in range(len(net.weights) - 1):
            if layer == net.skip:
                x = x + emb
            W, b = net.weights[layer], net.biases[layer]
            x = [mp.log1p(mp.exp(beta * (mp.fsum(mp.mpf(W[r, c]) * x[c] for c in range(len(x)))
                                         + mp.mpf(b[r])))) / beta
                 for r in range(W.shape[0])]
        W, b = net.weights[-1], net.biases[-1]
        o = mp.fsum(mp.mpf(W[0, c]) * x[c] for c in range(len(x))) + mp.mpf(b[0])
        return mp.mpf(net.d_max) * mp.tanh(o)


def jacobian_fd_mp(net, p, h=1e-4, dps=40):
    """Central differences at ``h`` and ``h/2`` (Richardson) evaluated in high precision."""
    import mpmath as mp

    with mp.workdps(dps):
        g = []
        for k in range(3):
            def cd(step):
                pp, pm = [mp.mpf(v) for v in p], [mp.mpf(v) for v in p]
                pp[k] += step
                pm[k] -= step
                return (network_value_mp(net, pp, dps) - network_value_mp(net, pm, dps)) / (2 * step)
            hh = mp.mpf(h)
            g.append(float((4 * cd(hh / 2) - cd(hh)) / 3))
    return np.array(g)
