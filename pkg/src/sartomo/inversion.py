"""L1-regularized tomographic inversion per sub-aperture and non-coherent fusion."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InversionError
from .grid import VoxelGrid, auto_grid, range_resolution  # noqa: F401  (re-export)
from .operators import SubApertureOperator

log = logging.getLogger(__name__)


@dataclass
class SubApertureImage:
    m: int
    values: np.ndarray
    grid: VoxelGrid
    theta_mean: float = 0.0
    phi_mean: float = 0.0
    lam: float = float("nan")
    objective: list = field(default_factory=list)
    residual: float = float("nan")

    def __post_init__(self):
        if self.values.shape != self.grid.dims:
            raise InversionError("image shape does not match its grid")


@dataclass
class FusedImage:
    values: np.ndarray
    grid: VoxelGrid

    def __post_init__(self):
        if np.any(self.values < 0):
            raise InversionError("fused image values must be non-negative")


def soft_threshold(x, thresh):
    """Complex soft-thresholding: shrink magnitudes by ``thresh``, keep phases."""
    mag = np.abs(x)
    scale = np.maximum(mag - thresh, 0.0) / np.where(mag > 0, mag, 1.0)
    return x * scale


def fista(op, y, lam, iters=200, tol=1e-6, x0=None):
    """Minimize ``0.5 ||A x - y||^2 + lam ||x||_1`` with monotone restarted FISTA.

    Whenever an accelerated step would raise the objective, the momentum is
    reset and a plain proximal-gradient step is taken from the last accepted
    iterate instead, so the returned objective history never increases.

    Iterations only touch the normal operator: the data term is evaluated as
    ``0.5 (x^H A^H A x - 2 Re x^H A^H y + ||y||^2)``.

    Returns ``(x, Ax, history)``.
    """
    if lam <= 0:
        raise InversionError("lambda must be positive")
    y = np.asarray(y, dtype=complex).reshape(op.sample_shape)
    step = 1.0 / (1.01 * op.lipschitz())
    b = op.adjoint(y)
    yy = float(np.vdot(y, y).real)

    def objective(x, gx):
        quad = float(np.vdot(x, gx).real) - 2.0 * float(np.vdot(x, b).real) + yy
        return 0.5 * max(quad, 0.0) + lam * float(np.abs(x).sum())

    if x0 is None:
        x = np.zeros(op.grid.dims, dtype=complex)
        gx = np.zeros_like(x)
    else:
        x = np.asarray(x0, dtype=complex)
        gx = op.normal(x)
    obj = objective(x, gx)
    history = [obj]
    z, gz, t = x, gx, 1.0
    for _ in range(iters):
        x_new = soft_threshold(z - step * (gz - b), lam * step)
        gx_new = op.normal(x_new)
        obj_new = objective(x_new, gx_new)
        if obj_new > obj:
            t = 1.0
            if z is not x:
                x_new = soft_threshold(x - step * (gx - b), lam * step)
                gx_new = op.normal(x_new)
                obj_new = objective(x_new, gx_new)
            if obj_new > obj:
                break
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        z = x_new + beta * (x_new - x) if beta > 0 else x_new
        gz = gx_new + beta * (gx_new - gx) if beta > 0 else gx_new
        change = abs(obj - obj_new) / max(abs(obj), 1e-300)
        x, gx, obj, t = x_new, gx_new, obj_new, t_new
        history.append(obj)
        if change < tol:
            break
    return x, op.forward(x), history


def lambda_max(op, y):
    """Smallest ``lam`` for which the zero image is optimal."""
    return float(np.abs(op.adjoint(y)).max())


def solve_subaperture(ph, grid, m, lam=None, lam_rel=None, sigma2=None, iters=200, tol=1e-6,
                      method="nufft", op=None, max_bisect=12):
    """Sparse complex voxel image for sub-aperture ``m``.

    Exactly one of ``lam`` (absolute), ``lam_rel`` (fraction of ``||A^H y||_inf``)
    or ``sigma2`` (target residual energy) may be given; the default is
    ``lam_rel=0.05``. With ``sigma2`` the weight is bisected in log space until
    the residual lands in ``[0.9, 1.1] * sigma2``.
    """
    y = ph.subaperture(m)
    if not np.all(np.isfinite(y)):
        raise InversionError("phase history contains non-finite samples")
    if sum(v is not None for v in (lam, lam_rel, sigma2)) > 1:
        raise InversionError("give at most one of lam, lam_rel, sigma2")
    if iters < 1:
        raise InversionError("iters must be >= 1")
    if op is None:
        op = SubApertureOperator(ph.geometry, grid, m, method)
    theta_bar, phi_bar = (a[m] for a in ph.geometry.mean_angles)
    lmax = lambda_max(op, y)

    if sigma2 is None:
        if lam is None:
            lam = (0.05 if lam_rel is None else lam_rel) * lmax
        if lam <= 0:
            raise InversionError("lambda must be positive")
        x, ax, hist = fista(op, y, lam, iters, tol)
    else:
        if sigma2 <= 0:
            raise InversionError("sigma2 must be positive")
        lo, hi = np.log(lmax * 1e-5), np.log(lmax)
        best = None
        x0 = None
        for _ in range(max_bisect):
            lam = float(np.exp(0.5 * (lo + hi)))
            x, ax, hist = fista(op, y, lam, iters, tol, x0=x0)
            res = float(np.linalg.norm(ax - y) ** 2)
            gap = abs(np.log(res / sigma2))
            if best is None or gap < best[0]:
                best = (gap, lam, x, ax, hist)
            if 0.9 * sigma2 <= res <= 1.1 * sigma2:
                break
            if res > sigma2:
                hi = np.log(lam)
            else:
                lo = np.log(lam)
            x0 = x
        _, lam, x, ax, hist = best
    residual = float(np.linalg.norm(ax - y) ** 2)
    return SubApertureImage(m, x, grid, float(theta_bar), float(phi_bar), float(lam), hist, residual)


def invert_all(ph, grid, threads=1, **kwargs):
    """Solve every sub-aperture; results are ordered by sub-aperture index."""
    n = ph.geometry.n_subapertures

    def work(m):
        img = solve_subaperture(ph, grid, m, **kwargs)
        log.debug("sub-aperture %d: %d iterations, lam=%.3g", m, len(img.objective) - 1, img.lam)
        return img

    if threads <= 1:
        return [work(m) for m in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(n)))


def fuse_noncoherent(images):
    """Element-wise sum of magnitudes of the sub-aperture images."""
    images = list(images)
    if not images:
        raise InversionError("no sub-aperture images to fuse")
    grid = images[0].grid
    total = np.zeros(grid.dims)
    for img in images:
        if img.grid != grid:
            raise InversionError("sub-aperture images live on different grids")
        total += np.abs(img.values)
    return FusedImage(total, grid)
