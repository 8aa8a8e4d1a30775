"""Collection geometry and phase-history simulation for point scatterers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, EmptySceneError, GeometryError

SPEED_OF_LIGHT = 299_792_458.0


def look_vectors(theta, phi):
    """Unit line-of-sight vectors for azimuth ``theta`` and elevation ``phi`` (radians)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack(
        [np.cos(phi) * np.cos(theta), np.sin(theta) * np.cos(phi), np.sin(phi)], axis=-1
    )


def steering_phase(p, f, theta, phi, c=SPEED_OF_LIGHT):
    """Unit phasor ``exp(-j 4 pi f / c * (p . look(theta, phi)))``.

    All arguments broadcast; ``p`` has a trailing axis of length 3.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    p = np.asarray(p, dtype=float)
    proj = np.sum(p * look_vectors(theta, phi), axis=-1)
    return np.exp(-1j * (4.0 * np.pi * f / c) * proj)


@dataclass(frozen=True)
class CollectionGeometry:
    """Frequencies plus per-pulse look angles for ``N_el`` passes of ``N_P`` pulses.

    ``theta``, ``phi`` and ``subaperture`` have shape ``(N_P, N_el)``.
    """

    frequencies: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    subaperture: np.ndarray
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        if f.ndim != 1 or f.size == 0 or np.any(f <= 0):
            raise GeometryError("frequencies must be a non-empty positive 1-d array")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise GeometryError("frequencies must be strictly increasing")
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        sub = np.atleast_2d(np.asarray(self.subaperture, dtype=np.int64))
        if theta.shape != phi.shape or theta.shape != sub.shape:
            raise GeometryError("theta, phi and subaperture shapes differ")
        labels = np.unique(sub)
        if labels[0] != 0 or labels[-1] != labels.size - 1:
            raise GeometryError("sub-aperture labels must be 0..N_s-1 without gaps")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "subaperture", sub)

    @property
    def n_frequencies(self):
        return self.frequencies.size

    @property
    def n_pulses(self):
        return self.theta.shape[0]

    @property
    def n_passes(self):
        return self.theta.shape[1]

    @property
    def n_subapertures(self):
        return int(self.subaperture.max()) + 1

    @property
    def shape(self):
        return (self.n_frequencies, self.n_pulses, self.n_passes)

    @property
    def bandwidth(self):
        return float(self.frequencies[-1] - self.frequencies[0])

    def members(self, m):
        """Boolean ``(N_P, N_el)`` mask of the pulses in sub-aperture ``m``."""
        if not 0 <= m < self.n_subapertures:
            raise IndexError(f"sub-aperture index {m} out of range")
        return self.subaperture == m

    @property
    def mean_angles(self):
        """``(theta_bar, phi_bar)`` arrays of length ``N_s``."""
        counts = np.bincount(self.subaperture.ravel())
        tb = np.bincount(self.subaperture.ravel(), weights=self.theta.ravel()) / counts
        pb = np.bincount(self.subaperture.ravel(), weights=self.phi.ravel()) / counts
        return tb, pb

    def mean_look_vectors(self):
        return look_vectors(*self.mean_angles)

    def wavenumbers(self, m=None):
        """Wave vectors ``4 pi f / c * look`` for each (f, pulse) sample.

        Returns shape ``(N_F, n, 3)`` where ``n`` runs over the member pulses of
        sub-aperture ``m`` in (j, e) row-major order, or over all pulses.
        """
        if m is None:
            th, ph = self.theta.ravel(), self.phi.ravel()
        else:
            mask = self.members(m)
            th, ph = self.theta[mask], self.phi[mask]
        look = look_vectors(th, ph)
        k = 4.0 * np.pi * self.frequencies / self.c
        return k[:, None, None] * look[None, :, :]

    def to_dict(self):
        return {
            "frequencies": self.frequencies.tolist(),
            "theta": self.theta.tolist(),
            "phi": self.phi.tolist(),
            "subaperture": self.subaperture.tolist(),
            "c": self.c,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["frequencies"]),
            np.array(d["theta"]),
            np.array(d["phi"]),
            np.array(d["subaperture"]),
            float(d.get("c", SPEED_OF_LIGHT)),
        )


@dataclass
class GeometryConfig:
    """Circular-aperture collection parameters.

    ``grouping="joint"`` bins each azimuth span across all elevation passes into
    one sub-aperture; ``"per_pass"`` keeps passes apart (``N_el`` groups per bin).
    """

    center_frequency: float = 9.6e9
    bandwidth: float = 640e6
    n_frequencies: int = 32
    azimuth_start_deg: float = 0.0
    azimuth_stop_deg: float = 360.0
    n_pulses: int = 720
    elevations_deg: list = field(default_factory=lambda: [30.0 + e for e in range(8)])
    subaperture_span_deg: float = 5.0
    grouping: str = "joint"

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
        return cls(**d)


def make_geometry(config) -> CollectionGeometry:
    """Build a circular collection with contiguous azimuth sub-apertures."""
    if isinstance(config, dict):
        config = GeometryConfig.from_dict(config)
    az_range = config.azimuth_stop_deg - config.azimuth_start_deg
    span = config.subaperture_span_deg
    if az_range <= 0 or span <= 0:
        raise GeometryError("azimuth range and sub-aperture span must be positive")
    if span > az_range + 1e-9:
        raise GeometryError("sub-aperture span larger than azimuth range")
    if config.n_frequencies < 1 or config.n_pulses < 1 or not config.elevations_deg:
        raise GeometryError("need at least one frequency, pulse and elevation pass")
    if config.grouping not in ("joint", "per_pass"):
        raise GeometryError(f"unknown grouping {config.grouping!r}")

    fc, bw, nf = config.center_frequency, config.bandwidth, config.n_frequencies
    freqs = np.array([fc]) if nf == 1 else np.linspace(fc - bw / 2, fc + bw / 2, nf)

    step = az_range / config.n_pulses
    az_deg = config.azimuth_start_deg + (np.arange(config.n_pulses) + 0.5) * step
    n_bins = math.ceil(az_range / span - 1e-9)
    bins = np.minimum(((az_deg - config.azimuth_start_deg) / span).astype(np.int64), n_bins - 1)
    # drop labels of empty bins (more bins than pulses)
    _, bins = np.unique(bins, return_inverse=True)
    n_bins = int(bins.max()) + 1

    n_el = len(config.elevations_deg)
    theta = np.repeat(np.deg2rad(az_deg)[:, None], n_el, axis=1)
    phi = np.repeat(np.deg2rad(np.asarray(config.elevations_deg, float))[None, :], config.n_pulses, axis=0)
    if config.grouping == "joint":
        sub = np.repeat(bins[:, None], n_el, axis=1)
    else:
        sub = bins[:, None] + n_bins * np.arange(n_el)[None, :]
    return CollectionGeometry(freqs, theta, phi, sub)


@dataclass
class PhaseHistory:
    samples: np.ndarray
    geometry: CollectionGeometry
    noise_sigma: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.shape != self.geometry.shape:
            raise GeometryError(
                f"samples shape {self.samples.shape} != geometry shape {self.geometry.shape}"
            )

    def subaperture(self, m):
        """Samples of sub-aperture ``m`` as an ``(N_F, n_m)`` array."""
        return self.samples[:, self.geometry.members(m)]


def pulse_noise(seed, shape, sigma):
    """Circular complex Gaussian noise with one counter-keyed stream per pulse.

    Each ``(j, e)`` pulse draws from its own generator keyed by ``(seed, j, e)``
    so the values do not depend on how pulses are partitioned across workers.
    """
    nf, npulse, nel = shape
    out = np.empty(shape, dtype=complex)
    scale = sigma / math.sqrt(2.0)
    for j in range(npulse):
        for e in range(nel):
            g = np.random.default_rng([seed, j, e])
            z = g.standard_normal((nf, 2))
            out[:, j, e] = scale * (z[:, 0] + 1j * z[:, 1])
    return out


def simulate_phase_history(scene, geom: CollectionGeometry, noise_sigma=0.0, seed=0, chunk=64):
    """Sum of scatterer phasors per sample, plus circular Gaussian noise.

    Sample ``(i, j, e)`` uses the coefficients of the sub-aperture that pulse
    ``(j, e)`` belongs to.
    """
    positions = np.asarray(scene.positions, dtype=float).reshape(-1, 3)
    coeffs = np.asarray(scene.coefficients, dtype=complex)
    if positions.shape[0] == 0:
        raise EmptySceneError("empty scene")
    if coeffs.ndim == 1:
        coeffs = np.repeat(coeffs[:, None], geom.n_subapertures, axis=1)
    if coeffs.shape != (positions.shape[0], geom.n_subapertures):
        raise GeometryError("scatterer coefficients do not match the number of sub-apertures")

    look = look_vectors(geom.theta.ravel(), geom.phi.ravel())  # (NP*Nel, 3)
    proj = look @ positions.T  # (npulse, K)
    sub = geom.subaperture.ravel()
    k = 4.0 * np.pi * geom.frequencies / geom.c
    out = np.empty((geom.n_frequencies, look.shape[0]), dtype=complex)
    for start in range(0, look.shape[0], chunk):
        sl = slice(start, start + chunk)
        s = coeffs[:, sub[sl]].T  # (chunk, K)
        ph = np.exp(-1j * k[:, None, None] * proj[None, sl, :])  # (NF, chunk, K)
        out[:, sl] = np.einsum("fpk,pk->fp", ph, s)
    samples = out.reshape(geom.shape)
    if noise_sigma > 0:
        samples = samples + pulse_noise(seed, geom.shape, noise_sigma)
    return PhaseHistory(samples, geom, float(noise_sigma), seed)
