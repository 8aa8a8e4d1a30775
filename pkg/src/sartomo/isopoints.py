"""Points kept on the zero-level set of a field: projection, resampling, upsampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import IsoSurfaceNotFoundError

RESIDUAL_TOL = 1e-4
_GUARD = 1e-12


@dataclass
class SamplerParams:
    """Step clip ``tau0``, neighborhood radius ``eps``, density bandwidth ``sigma_p``.

    ``alpha_step`` is in units of ``sigma_p``: a lone pair at distance ``d``
    separates by ``2 * alpha_step * sigma_p * exp(-d^2 / sigma_p^2)`` per pass.

    ``literal_edge_sign`` subtracts the edge term in the edge-aware update like
    the repulsion term. That drags points onto convex edges; by default the
    edge term is added instead, moving each point toward the centroid of the
    neighbors sharing its tangent plane and therefore off the edge.
    """

    tau0: float
    eps: float
    sigma_p: float
    alpha_step: float = 0.5
    max_newton: int = 10
    tol: float = RESIDUAL_TOL
    bounds: tuple | None = None
    edge_aware: bool = True
    literal_edge_sign: bool = False

    def __post_init__(self):
        if min(self.tau0, self.eps, self.sigma_p, self.alpha_step) <= 0 or self.max_newton < 1:
            raise ValueError("sampler parameters must be positive")

    @classmethod
    def for_bounds(cls, bounds, target_count, area=None, **kw):
        """Defaults derived from the region of interest and the target density.

        ``area`` is the expected surface area; without it half the surface area
        of the bounding box is assumed.
        """
        lo, hi = (np.asarray(b, float) for b in bounds)
        ext = hi - lo
        if area is None:
            area = ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2]
        spacing = math.sqrt(area / max(int(target_count), 1))
        eps = 2.0 * spacing
        return cls(tau0=float(np.linalg.norm(ext)) / 20, eps=eps, sigma_p=eps / math.sqrt(2),
                   bounds=(lo, hi), **kw)


@dataclass
class IsoPointSet:
    points: np.ndarray
    normals: np.ndarray
    residuals: np.ndarray

    def __len__(self):
        return len(self.points)


def clip_pi(x, tau0):
    """Scale rows of ``x`` down to norm at most ``tau0``; direction is kept."""
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    factor = np.minimum(norm, tau0) / np.where(norm > 0, norm, 1.0)
    return x * factor


def _vj(field, q):
    f, J = field.value_and_jacobian(q)
    return np.atleast_1d(f), np.atleast_2d(J)


@dataclass
class Projection:
    points: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    status: np.ndarray  # "converged", "max_iter" or "degenerate gradient"


def project_newton(field, q0, params):
    """Clipped Newton steps ``q <- q - pi(J f / |J|^2)`` until ``|f| <= tol``."""
    q = np.array(np.atleast_2d(q0), dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite start points")
    n = len(q)
    active = np.ones(n, bool)
    converged = np.zeros(n, bool)
    iters = np.zeros(n, int)
    status = np.full(n, "max_iter", dtype=object)
    for k in range(params.max_newton + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        f, J = _vj(field, q[idx])
        done = np.abs(f) <= params.tol
        converged[idx[done]] = True
        status[idx[done]] = "converged"
        active[idx[done]] = False
        jn2 = np.einsum("ij,ij->i", J, J)
        bad = ~done & (np.sqrt(jn2) < 1e-9)
        status[idx[bad]] = "degenerate gradient"
        active[idx[bad]] = False
        go = ~done & ~bad
        if k == params.max_newton or not go.any():
            break
        step = J[go] * (f[go] / jn2[go])[:, None]
        q[idx[go]] -= clip_pi(step, params.tau0)
        iters[idx[go]] += 1
    return Projection(q, converged, iters, status)


def _in_bounds(points, bounds):
    if bounds is None:
        return np.ones(len(points), bool)
    lo, hi = bounds
    return np.all((points >= lo) & (points <= hi), axis=1)


def make_iso_set(field, points, params):
    """Project ``points`` and keep those that converged inside the bounds."""
    if len(points) == 0:
        return IsoPointSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    proj = project_newton(field, points, params)
    keep = proj.converged & _in_bounds(proj.points, params.bounds)
    q = proj.points[keep]
    if len(q) == 0:
        return IsoPointSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    f, J = _vj(field, q)
    normals = J / np.maximum(np.linalg.norm(J, axis=1, keepdims=True), _GUARD)
    return IsoPointSet(q, normals, np.abs(f))


def density_weight(dist, sigma_p):
    return np.exp(-(np.asarray(dist) ** 2) / sigma_p**2)


def _neighbor_pairs(points, radius):
    """Directed neighbor pairs ``(i, j)``, ``i != j``, ``|p_j - p_i| <= radius``."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return np.zeros(0, int), np.zeros(0, int)
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((j, i))
    return i[order], j[order]


def _scatter_sum(index, values, n):
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, index, values)
    return out


def repulsion_step(points, params):
    """``alpha sum_i w(q_i, q) (q_i - q) / |q_i - q|`` over the eps-ball of each point."""
    n = len(points)
    i, j = _neighbor_pairs(points, params.eps)
    if i.size == 0:
        return np.zeros_like(points)
    d = points[j] - points[i]
    dist = np.linalg.norm(d, axis=1)
    w = density_weight(dist, params.sigma_p)
    contrib = (w / (dist + _GUARD))[:, None] * d
    return params.alpha_step * params.sigma_p * _scatter_sum(i, contrib, n)


def resample_uniform(iso, field, params):
    """Push points out of dense regions, then re-project onto the level set."""
    if len(iso) <= 1:
        return iso
    step = repulsion_step(iso.points, params)
    moved = iso.points - clip_pi(step, params.tau0)
    return make_iso_set(field, moved, params)


def edge_aware_steps(points, normals, params):
    """``(dq_repulsion, dq_edge)`` for every point; zero for isolated points."""
    n = len(points)
    i, j = _neighbor_pairs(points, params.eps)
    rep = np.zeros_like(points)
    edge = np.zeros_like(points)
    if i.size == 0:
        return rep, edge
    d = points[j] - points[i]
    dist = np.linalg.norm(d, axis=1)
    w = density_weight(dist, params.sigma_p)
    rep = 0.5 * _scatter_sum(i, w[:, None] * d, n) / (_scatter_sum(i, w, n)[:, None] + _GUARD)
    expo = -np.einsum("ij,ij->i", normals[j], d) / params.sigma_p**2
    # shift exponents per point: the weights only enter as a normalized ratio
    shift = np.full(n, -np.inf)
    np.maximum.at(shift, i, expo)
    phi = np.exp(expo - shift[i])
    edge = _scatter_sum(i, phi[:, None] * d, n) / (_scatter_sum(i, phi, n)[:, None] + _GUARD)
    return rep, edge


def resample_edge_aware(iso, field, params):
    """``q <- q - pi(dq_repulsion) + pi(dq_edge)`` followed by re-projection.

    See :class:`SamplerParams` for the sign of the edge term.
    """
    if len(iso) <= 1:
        return iso
    rep, edge = edge_aware_steps(iso.points, iso.normals, params)
    sign = -1.0 if params.literal_edge_sign else 1.0
    moved = iso.points - clip_pi(rep, params.tau0) + sign * clip_pi(edge, params.tau0)
    return make_iso_set(field, moved, params)


def insertion_candidates(points, params, count):
    """Up to ``count`` new points ``(q_i* + 2 q*) / 3`` in the sparsest regions.

    The priority of a point is the distance to its farthest neighbor within
    ``eps``; ``q*`` is that farthest neighbor and ``q_i*`` is in turn the farthest
    neighbor of ``q*``.
    """
    i, j = _neighbor_pairs(points, params.eps)
    if i.size == 0:
        return np.zeros((0, 3))
    n = len(points)
    dist = np.linalg.norm(points[j] - points[i], axis=1)
    prio = np.full(n, -1.0)
    np.maximum.at(prio, i, dist)
    far = np.full(n, -1)
    hit = dist == prio[i]
    # first farthest neighbor in (i, j) order
    far_i, first = np.unique(i[hit], return_index=True)
    far[far_i] = j[hit][first]
    order = np.argsort(-prio, kind="stable")
    order = order[prio[order] > 0]
    new, used = [], set()
    for q in order:
        q_star = far[q]
        q_istar = far[q_star]
        if q_istar < 0:
            continue
        key = (min(q_star, q_istar), max(q_star, q_istar))
        if key in used:
            continue
        used.add(key)
        new.append((points[q_istar] + 2.0 * points[q_star]) / 3.0)
        if len(new) >= count:
            break
    return np.asarray(new).reshape(-1, 3)


def upsample(iso, field, params, target_count, max_rounds=50):
    """Insert projected points until ``target_count`` or no insertion survives."""
    if target_count < len(iso):
        raise ValueError("target_count is below the current count")
    for _ in range(max_rounds):
        need = target_count - len(iso)
        if need <= 0:
            break
        batch = min(need, max(1, len(iso) // 2))
        cand = insertion_candidates(iso.points, params, batch)
        if len(cand) == 0:
            break
        added = make_iso_set(field, cand, params)
        if len(added) == 0:
            break
        iso = IsoPointSet(
            np.vstack([iso.points, added.points]),
            np.vstack([iso.normals, added.normals]),
            np.concatenate([iso.residuals, added.residuals]),
        )
    return iso


def seed_near(points, params, count, rng, uniform_fraction=0.1):
    """Gaussian jitter (std ``eps / 2``) around ``points`` plus uniform box samples."""
    points = np.asarray(points, float)
    n_uniform = int(round(uniform_fraction * count))
    pick = rng.integers(0, len(points), count - n_uniform)
    near = points[pick] + rng.normal(scale=params.eps / 2, size=(len(pick), 3))
    if params.bounds is not None and n_uniform:
        lo, hi = params.bounds
        near = np.vstack([near, rng.uniform(lo, hi, (n_uniform, 3))])
    return near


def refresh(field, seed_points, params, target_count, seed=0):
    """Seed near ``seed_points``, project, resample (uniform, edge-aware), upsample."""
    seed_points = np.asarray(seed_points, float).reshape(-1, 3)
    if len(seed_points) == 0:
        raise ValueError("no seed points")
    rng = np.random.default_rng(seed)
    iso = make_iso_set(field, seed_near(seed_points, params, target_count, rng), params)
    if len(iso) < 10:
        raise IsoSurfaceNotFoundError("iso-surface not found")
    if len(iso) > target_count:
        keep = np.sort(rng.choice(len(iso), target_count, replace=False))
        iso = IsoPointSet(iso.points[keep], iso.normals[keep], iso.residuals[keep])
    iso = resample_uniform(iso, field, params)
    if params.edge_aware:
        iso = resample_edge_aware(iso, field, params)
    if len(iso) < 10:
        raise IsoSurfaceNotFoundError("iso-surface not found")
    return upsample(iso, field, params, max(target_count, len(iso)))


def nn_distances(points):
    d, _ = cKDTree(points).query(points, k=2)
    return d[:, 1]


def with_params(params, **changes):
    return replace(params, **changes)
