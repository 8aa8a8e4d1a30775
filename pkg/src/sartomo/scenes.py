"""Ground-truth surfaces and scatterer scenes sampled from them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class Sphere:
    kind = "sphere"

    def __init__(self, radius=1.0, center=(0.0, 0.0, 0.0)):
        if radius <= 0:
            raise ConfigError("sphere radius must be positive")
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float)

    def sdf(self, p):
        return np.linalg.norm(np.asarray(p) - self.center, axis=-1) - self.radius

    def sample_surface(self, n, rng):
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.center + self.radius * d, d

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def area(self):
        return 4 * np.pi * self.radius**2

    def to_dict(self):
        return {"type": "sphere", "radius": self.radius, "center": self.center.tolist()}


class Box:
    kind = "box"

    def __init__(self, half_extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
        self.half = np.asarray(half_extents, dtype=float)
        if self.half.shape != (3,) or np.any(self.half <= 0):
            raise ConfigError("box half extents must be three positive numbers")
        self.center = np.asarray(center, dtype=float)

    def sdf(self, p):
        q = np.abs(np.asarray(p) - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def face_areas(self):
        a, b, c = 2 * self.half
        return np.array([b * c, b * c, a * c, a * c, a * b, a * b])

    def sample_surface(self, n, rng):
        areas = self.face_areas()
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1, 1, (n, 3)) * self.half
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        u[np.arange(n), axis] = sign * self.half[axis]
        normals = np.zeros((n, 3))
        normals[np.arange(n), axis] = sign
        return self.center + u, normals

    def bounds(self):
        return self.center - self.half, self.center + self.half

    def area(self):
        return float(self.face_areas().sum())

    def edge_distance(self, p):
        """Distance from surface points to the nearest of the 12 box edges."""
        q = np.abs(np.asarray(p) - self.center)
        gap = self.half - q  # per-axis distance to the two faces meeting that axis
        g = np.sort(gap, axis=-1)
        # on a face one gap is ~0; the nearest edge is reached through the next smallest
        return np.hypot(g[..., 0], g[..., 1])

    def to_dict(self):
        return {"type": "box", "half_extents": self.half.tolist(), "center": self.center.tolist()}


class Cylinder:
    """Closed cylinder with its axis along z."""

    kind = "cylinder"

    def __init__(self, radius=1.0, half_height=1.0, center=(0.0, 0.0, 0.0)):
        if radius <= 0 or half_height <= 0:
            raise ConfigError("cylinder radius and half height must be positive")
        self.radius = float(radius)
        self.half_height = float(half_height)
        self.center = np.asarray(center, dtype=float)

    def sdf(self, p):
        q = np.asarray(p) - self.center
        d = np.stack([np.hypot(q[..., 0], q[..., 1]) - self.radius, np.abs(q[..., 2]) - self.half_height], -1)
        return np.minimum(d.max(-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)

    def sample_surface(self, n, rng):
        r, h = self.radius, self.half_height
        a_side, a_cap = 2 * np.pi * r * 2 * h, np.pi * r**2
        part = rng.choice(3, size=n, p=np.array([a_side, a_cap, a_cap]) / (a_side + 2 * a_cap))
        ang = rng.uniform(0, 2 * np.pi, n)
        rad = r * np.sqrt(rng.uniform(0, 1, n))
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        side = part == 0
        pts[side] = np.stack([r * np.cos(ang[side]), r * np.sin(ang[side]), rng.uniform(-h, h, side.sum())], -1)
        nrm[side] = np.stack([np.cos(ang[side]), np.sin(ang[side]), np.zeros(side.sum())], -1)
        for label, z in ((1, h), (2, -h)):
            cap = part == label
            pts[cap] = np.stack([rad[cap] * np.cos(ang[cap]), rad[cap] * np.sin(ang[cap]), np.full(cap.sum(), z)], -1)
            nrm[cap, 2] = np.sign(z)
        return self.center + pts, nrm

    def bounds(self):
        e = np.array([self.radius, self.radius, self.half_height])
        return self.center - e, self.center + e

    def area(self):
        return 2 * np.pi * self.radius * 2 * self.half_height + 2 * np.pi * self.radius**2

    def to_dict(self):
        return {
            "type": "cylinder",
            "radius": self.radius,
            "half_height": self.half_height,
            "center": self.center.tolist(),
        }


class MeshSurface:
    """Closed triangle mesh with outward (counter-clockwise) winding."""

    kind = "mesh"

    def __init__(self, vertices, faces):
        self.vertices = np.asarray(vertices, dtype=float)
        self.faces = np.asarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ConfigError("mesh vertices must be (n, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3 or self.faces.min() < 0 \
                or self.faces.max() >= len(self.vertices):
            raise ConfigError("mesh faces must be (m, 3) indices into vertices")
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        self._areas = 0.5 * np.linalg.norm(cross, axis=1)
        self._normals = cross / np.maximum(2 * self._areas[:, None], 1e-300)

    def sample_surface(self, n, rng):
        idx = rng.choice(len(self.faces), size=n, p=self._areas / self._areas.sum())
        r1, r2 = rng.uniform(size=n), rng.uniform(size=n)
        s = np.sqrt(r1)
        w = np.stack([1 - s, s * (1 - r2), s * r2], -1)
        tri = self.vertices[self.faces[idx]]
        return np.einsum("ni,nij->nj", w, tri), self._normals[idx].copy()

    def bounds(self):
        return self.vertices.min(0), self.vertices.max(0)

    def area(self):
        return float(self._areas.sum())

    def to_dict(self):
        return {"type": "mesh", "vertices": self.vertices.tolist(), "faces": self.faces.tolist()}


def vehicle_proxy(length=4.4, width=1.8, height=1.5, center=(0.0, 0.0, 0.0)):
    """Low-poly car: a side silhouette in the x-z plane extruded along y."""
    L, H = length, height
    profile = np.array([
        [-0.50, 0.00], [0.50, 0.00], [0.50, 0.30], [0.42, 0.45], [0.18, 0.50],
        [0.05, 0.95], [-0.28, 1.00], [-0.42, 0.62], [-0.50, 0.55],
    ]) * [L, H]
    profile[:, 1] -= H / 2
    n = len(profile)
    hw = width / 2
    verts = [[x, -hw, z] for x, z in profile] + [[x, hw, z] for x, z in profile]
    c = profile.mean(0)
    verts += [[c[0], -hw, c[1]], [c[0], hw, c[1]]]
    ca, cb = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        # profile is counter-clockwise in (x, z); the y = -hw cap faces -y
        faces.append([ca, i, j])
        faces.append([cb, n + j, n + i])
        faces.append([i, n + i, n + j])
        faces.append([i, n + j, j])
    mesh = MeshSurface(np.asarray(verts) + np.asarray(center), faces)
    # orient outward: the signed volume must be positive
    tri = mesh.vertices[mesh.faces]
    vol = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6
    if vol < 0:
        mesh = MeshSurface(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def surface_from_dict(spec):
    """Build a surface from a JSON-style spec such as ``{"type": "sphere", "radius": 1}``."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("surface spec must be a dict with a 'type' key")
    kind = spec["type"]
    args = {k: v for k, v in spec.items() if k != "type"}
    builders = {
        "sphere": Sphere,
        "box": Box,
        "cylinder": Cylinder,
        "mesh": MeshSurface,
        "vehicle": vehicle_proxy,
    }
    if kind not in builders:
        raise ConfigError(f"unknown surface type {kind!r}")
    try:
        return builders[kind](**args)
    except TypeError as exc:
        raise ConfigError(f"invalid {kind} spec: {exc}") from None


@dataclass(frozen=True)
class ScatteringCenter:
    position: np.ndarray
    coeffs: np.ndarray


@dataclass
class Scene:
    """Ground-truth surface plus point scatterers sampled on it.

    ``coefficients`` has shape ``(K, N_s)``: one complex reflectivity per
    sub-aperture.
    """

    surface: object
    positions: np.ndarray
    coefficients: np.ndarray
    normals: np.ndarray
    bbox: tuple

    @property
    def scatterers(self):
        return [ScatteringCenter(p, c) for p, c in zip(self.positions, self.coefficients)]

    @property
    def n_subapertures(self):
        return self.coefficients.shape[1]

    def surface_samples(self, n, seed=0):
        return self.surface.sample_surface(n, np.random.default_rng(seed))


def padded_bounds(surface, pad=0.15):
    lo, hi = surface.bounds()
    margin = pad * float(np.max(hi - lo))
    return lo - margin, hi + margin


def sample_scene(surface, n_scatterers, coeff_model="constant", geometry=None, n_subapertures=None,
                 seed=0, pad=0.15):
    """Sample ``n_scatterers`` surface points with per-sub-aperture coefficients.

    ``"constant"`` gives each scatterer one unit-magnitude random-phase value in
    every sub-aperture. ``"persistence"`` zeroes the coefficient in sub-apertures
    whose mean look direction faces away from the scatterer's surface normal,
    and needs ``geometry``.
    """
    if isinstance(surface, dict):
        surface = surface_from_dict(surface)
    if n_scatterers < 1:
        raise ConfigError("need at least one scatterer")
    rng = np.random.default_rng(seed)
    pts, nrm = surface.sample_surface(int(n_scatterers), rng)
    if geometry is not None:
        n_subapertures = geometry.n_subapertures
    if n_subapertures is None:
        n_subapertures = 1
    phase = np.exp(2j * np.pi * rng.uniform(size=len(pts)))
    coeffs = np.repeat(phase[:, None], n_subapertures, axis=1)
    if coeff_model == "persistence":
        if geometry is None:
            raise ConfigError("persistence coefficient model needs a collection geometry")
        visible = nrm @ geometry.mean_look_vectors().T > 0
        coeffs = np.where(visible, coeffs, 0.0)
    elif coeff_model != "constant":
        raise ConfigError(f"unknown coefficient model {coeff_model!r}")
    return Scene(surface, pts, coeffs, nrm, padded_bounds(surface, pad))
