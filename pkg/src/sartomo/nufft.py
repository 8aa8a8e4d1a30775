"""Kaiser-Bessel gridding NUFFT between a 3-d grid and arbitrary frequencies.

``forward`` evaluates ``y(w) = sum_n x[n] exp(-j w . (n - N // 2))`` for
frequencies ``w`` in radians per sample; ``adjoint`` is its exact transpose.
"""
from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.sparse as sp


def kb_beta(width, oversamp):
    # Beatty et al. choice of shape parameter for a given width and oversampling
    return np.pi * np.sqrt((width / oversamp) ** 2 * (oversamp - 0.5) ** 2 - 0.8)


def kb_kernel(u, width, beta):
    """Kaiser-Bessel window on ``|u| <= width / 2`` (grid units)."""
    u = np.asarray(u, dtype=float)
    arg = 1.0 - (2.0 * u / width) ** 2
    return np.where(arg >= 0, np.i0(beta * np.sqrt(np.clip(arg, 0, None))), 0.0)


def kb_transform(nu, width, beta):
    """Continuous Fourier transform of :func:`kb_kernel` at frequency ``nu`` (cycles/sample)."""
    z = beta**2 - (np.pi * width * np.asarray(nu, float)) ** 2
    out = np.empty_like(z)
    pos = z > 1e-12
    neg = z < -1e-12
    r = np.sqrt(z[pos])
    out[pos] = width * np.sinh(r) / r
    r = np.sqrt(-z[neg])
    out[neg] = width * np.sin(r) / r
    out[~(pos | neg)] = width
    return out


def _real_matvec(a, x):
    # real sparse times complex vector as a two-column real product (no upcast of ``a``)
    x = np.ascontiguousarray(x, dtype=complex)
    out = a @ x.view(np.float64).reshape(-1, 2)
    return np.ascontiguousarray(out).view(complex).ravel()


class NufftPlan:
    """Precomputed interpolation matrix and deapodization for fixed frequencies."""

    def __init__(self, omega, shape, oversamp=2.0, width=6, workers=None):
        omega = np.asarray(omega, dtype=float).reshape(-1, 3)
        self.shape = tuple(int(n) for n in shape)
        self.grid_shape = tuple(int(np.ceil(oversamp * n)) for n in self.shape)
        self.width = int(width)
        self.beta = kb_beta(width, oversamp)
        self.workers = workers
        self.n_samples = omega.shape[0]

        half = self.width // 2
        offsets = np.arange(self.width) - half + 1
        idx, wts = [], []
        for d in range(3):
            K = self.grid_shape[d]
            t = omega[:, d] * K / (2 * np.pi)
            k = np.floor(t).astype(np.int64)[:, None] + offsets[None, :]
            wts.append(kb_kernel(t[:, None] - k, self.width, self.beta))
            idx.append(np.mod(k, K))
        Kx, Ky, Kz = self.grid_shape
        cols = (idx[0][:, :, None, None] * (Ky * Kz) + idx[1][:, None, :, None] * Kz
                + idx[2][:, None, None, :])
        vals = wts[0][:, :, None, None] * wts[1][:, None, :, None] * wts[2][:, None, None, :]
        m = self.n_samples
        rows = np.repeat(np.arange(m), self.width**3)
        self.interp = sp.csr_matrix(
            (vals.ravel(), (rows, cols.ravel())), shape=(m, Kx * Ky * Kz)
        )
        self.interp_t = self.interp.T.tocsr()

        deapod = np.ones(self.shape)
        for d in range(3):
            n = np.arange(self.shape[d]) - self.shape[d] // 2
            h = kb_transform(n / self.grid_shape[d], self.width, self.beta)
            sh = [1, 1, 1]
            sh[d] = -1
            deapod = deapod * h.reshape(sh)
        self.scale = 1.0 / deapod
        self._shift = tuple(-(n // 2) for n in self.shape)

    def forward(self, x):
        x = np.asarray(x).reshape(self.shape)
        padded = np.zeros(self.grid_shape, dtype=complex)
        padded[: self.shape[0], : self.shape[1], : self.shape[2]] = x * self.scale
        padded = np.roll(padded, self._shift, axis=(0, 1, 2))
        spec = scipy.fft.fftn(padded, workers=self.workers)
        return _real_matvec(self.interp, spec.ravel())

    def adjoint(self, y):
        y = np.asarray(y, dtype=complex).ravel()
        spread = _real_matvec(self.interp_t, y).reshape(self.grid_shape)
        img = scipy.fft.ifftn(spread, workers=self.workers, norm="forward")
        img = np.roll(img, tuple(-s for s in self._shift), axis=(0, 1, 2))
        return img[: self.shape[0], : self.shape[1], : self.shape[2]] * self.scale


class ToeplitzGram:
    """``A^H A`` of a :class:`NufftPlan` as a zero-padded FFT convolution.

    ``(A^H A x)[l] = sum_l' t(l - l') x[l']`` with ``t(d) = sum_s exp(j w_s . d)``.
    The kernel is tabulated for ``|d_k| < N_k`` with one adjoint transform on a
    doubled grid, after which each product costs two FFTs of size ``2N``.
    """

    def __init__(self, omega, shape, oversamp=2.0, width=6, workers=None):
        self.shape = tuple(int(n) for n in shape)
        self.pad_shape = tuple(2 * n for n in self.shape)
        self.workers = workers
        omega = np.asarray(omega, dtype=float).reshape(-1, 3)
        plan = NufftPlan(omega, self.pad_shape, oversamp, width, workers)
        # centered index of the doubled grid runs over -N..N-1 = every needed offset
        t = plan.adjoint(np.ones(omega.shape[0], dtype=complex))
        t = np.roll(t, tuple(-n for n in self.shape), axis=(0, 1, 2))  # offset 0 -> index 0
        # the circular wrap of offset -N lands on N; no output pair uses it
        for d, n in enumerate(self.shape):
            sl = [slice(None)] * 3
            sl[d] = n
            t[tuple(sl)] = 0.0
        self.kernel_hat = scipy.fft.fftn(t, workers=workers)

    def __call__(self, x):
        x = np.asarray(x, dtype=complex).reshape(self.shape)
        padded = np.zeros(self.pad_shape, dtype=complex)
        padded[: self.shape[0], : self.shape[1], : self.shape[2]] = x
        out = scipy.fft.ifftn(scipy.fft.fftn(padded, workers=self.workers) * self.kernel_hat,
                              workers=self.workers)
        return out[: self.shape[0], : self.shape[1], : self.shape[2]]

    def norm_bound(self):
        """Upper bound on the spectral norm (that of the circulant embedding)."""
        return float(np.abs(self.kernel_hat).max())
