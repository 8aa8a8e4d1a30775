"""Finite-difference checks of the network derivatives, shared with the acceptance suite."""
from __future__ import annotations

import numpy as np

from oracles import jacobian_fd_mp, richardson_gradient
from sartomo.network import (
    NetworkConfig,
    backward,
    flat_params,
    forward_train,
    init_network,
    set_flat_params,
)

SMALL = NetworkConfig(n_layers=3, width=8, n_features=3, sigma_ff=1.0, skip_layer=1)


def random_small_net(seed):
    bounds = (-np.ones(3), np.ones(3))
    return init_network(SMALL, seed=seed, bounds=bounds)


def rel_err(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


def jacobian_error(net, p, h=1e-4):
    """Relative error of the analytic Jacobian against extrapolated central differences.

    The differences are taken in 40-digit arithmetic: on saturated nets the
    gradient can be eight orders below the value, where float64 differences
    lose all their digits to cancellation.
    """
    _, J = net.value_and_jacobian(p)
    return rel_err(J, jacobian_fd_mp(net, p, h))


def loss_value(net, p, v):
    """``sum f + sum |J|^2 + sum J.v``: touches the value and the Jacobian path."""
    f, J, _ = forward_train(net, p)
    return float(f.sum() + np.sum(J * J) + np.sum(J * v))


def parameter_gradient_error(net, p, v, h=1e-5):
    f, J, cache = forward_train(net, p)
    g = backward(net, cache, np.ones(len(p)), 2 * J + v)
    analytic = np.concatenate([a.ravel() for a in g])
    theta0 = flat_params(net)
    probe = net.copy()

    def fun(theta):
        set_flat_params(probe, theta)
        return loss_value(probe, p, v)

    fd = richardson_gradient(fun, theta0, h)
    return rel_err(analytic, fd)


def check_nets(n_nets=100, seed0=0):
    """Worst Jacobian and parameter-gradient errors over ``n_nets`` random nets."""
    worst_j, worst_p = 0.0, 0.0
    for s in range(n_nets):
        net = random_small_net(seed0 + s)
        rng = np.random.default_rng([seed0 + s, 99])
        p = rng.uniform(-0.9, 0.9, 3)
        worst_j = max(worst_j, jacobian_error(net, p))
        pts = rng.uniform(-0.9, 0.9, (2, 3))
        v = rng.normal(size=(2, 3))
        worst_p = max(worst_p, parameter_gradient_error(net, pts, v))
    return worst_j, worst_p
