"""Per-sub-aperture measurement operators mapping voxel images to phase history."""
from __future__ import annotations

import numpy as np

from .nufft import NufftPlan, ToeplitzGram


class SubApertureOperator:
    """Linear map from complex voxel values to the samples of sub-aperture ``m``.

    Samples are ordered ``(i, n)`` with ``i`` over frequencies and ``n`` over
    member pulses in (j, e) row-major order, matching ``PhaseHistory.subaperture``.

    ``method="nufft"`` grids onto a 2x oversampled k-space with a width-6
    Kaiser-Bessel kernel, and applies ``A^H A`` as a Toeplitz convolution;
    ``method="direct"`` evaluates the exact sums.
    """

    def __init__(self, geom, grid, m, method="nufft", workers=None, chunk=256):
        if method not in ("nufft", "direct"):
            raise ValueError(f"unknown operator method {method!r}")
        self.geom, self.grid, self.m, self.method = geom, grid, m, method
        k = geom.wavenumbers(m)  # raises IndexError on bad m
        self.sample_shape = k.shape[:2]
        self.k = k.reshape(-1, 3)
        self.chunk = chunk
        self._lipschitz = None
        self._gram = None
        self.workers = workers
        if method == "nufft":
            self.omega = self.k * np.asarray(grid.spacing)
            self.plan = NufftPlan(self.omega, grid.dims, workers=workers)
            self.ref_phase = np.exp(-1j * self.k @ grid.center)
        else:
            self.centers = grid.centers()

    @property
    def n_samples(self):
        return self.k.shape[0]

    def forward(self, x):
        x = np.asarray(x, dtype=complex)
        if x.shape != self.grid.dims:
            raise ValueError(f"image shape {x.shape} does not match grid {self.grid.dims}")
        if self.method == "nufft":
            y = self.ref_phase * self.plan.forward(x)
        else:
            flat = x.ravel()
            nz = np.flatnonzero(flat)
            y = np.zeros(self.n_samples, dtype=complex)
            if nz.size:
                pos = self.centers[nz]
                for s in range(0, self.n_samples, self.chunk):
                    sl = slice(s, s + self.chunk)
                    y[sl] = np.exp(-1j * self.k[sl] @ pos.T) @ flat[nz]
        return y.reshape(self.sample_shape)

    def adjoint(self, y):
        y = np.asarray(y, dtype=complex)
        if y.size != self.n_samples:
            raise ValueError(f"expected {self.n_samples} samples, got {y.size}")
        y = y.ravel()
        if self.method == "nufft":
            return self.plan.adjoint(np.conj(self.ref_phase) * y)
        out = np.zeros(self.grid.size, dtype=complex)
        for s in range(0, self.n_samples, self.chunk):
            sl = slice(s, s + self.chunk)
            out += np.exp(1j * self.centers @ self.k[sl].T) @ y[sl]
        return out.reshape(self.grid.dims)

    def normal(self, x):
        """``A^H A x``."""
        if self.method == "direct":
            return self.adjoint(self.forward(x))
        if self._gram is None:
            self._gram = ToeplitzGram(self.omega, self.grid.dims, workers=self.workers)
        return self._gram(x)

    def lipschitz(self, n_iter=40, seed=0):
        """Largest eigenvalue of ``A^H A`` by power iteration (cached)."""
        if self._lipschitz is None:
            rng = np.random.default_rng(seed)
            v = rng.standard_normal(self.grid.dims) + 1j * rng.standard_normal(self.grid.dims)
            v /= np.linalg.norm(v)
            lam = 0.0
            for _ in range(n_iter):
                w = self.normal(v)
                lam = float(np.real(np.vdot(v, w)))
                v = w / np.linalg.norm(w)
            self._lipschitz = lam
        return self._lipschitz


def forward_operator(img, geom, m, grid, method="nufft"):
    """Phase-history samples of sub-aperture ``m`` predicted from voxel values ``img``."""
    return SubApertureOperator(geom, grid, m, method).forward(img)


def adjoint_operator(samples, geom, grid, m, method="nufft"):
    return SubApertureOperator(geom, grid, m, method).adjoint(samples)
