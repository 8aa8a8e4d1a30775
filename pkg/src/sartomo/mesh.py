"""Zero-level-set triangle meshes and point-set distances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes

from .errors import EmptyLevelSetError
from .io import write_mesh_ply, write_obj


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def face_areas(self):
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def area(self):
        return float(self.face_areas().sum())

    def edges(self):
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def is_watertight(self):
        """Every edge is shared by exactly two faces."""
        if self.n_faces == 0:
            return False
        _, counts = self.edges()
        return bool(np.all(counts == 2))

    def euler_characteristic(self):
        edges, _ = self.edges()
        used = np.unique(self.faces)
        return int(len(used) - len(edges) + self.n_faces)

    def sample(self, n, rng):
        """Area-weighted uniform points on the triangles."""
        areas = self.face_areas()
        tri = rng.choice(self.n_faces, size=n, p=areas / areas.sum())
        r1, r2 = rng.random(n), rng.random(n)
        s = np.sqrt(r1)
        a, b, c = (self.vertices[self.faces[tri, k]] for k in range(3))
        return (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c

    def save(self, path):
        if str(path).lower().endswith(".obj"):
            write_obj(path, self.vertices, self.faces, self.normals)
        else:
            write_mesh_ply(path, self.vertices, self.faces, self.normals)


def evaluate_on_grid(field, lo, hi, resolution, chunk=65536):
    """Field values on a ``resolution^3`` lattice spanning ``[lo, hi]``."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    res = np.broadcast_to(np.asarray(resolution, int), (3,))
    if np.any(res < 2):
        raise ValueError("resolution must be at least 2")
    axes = [np.linspace(lo[k], hi[k], res[k]) for k in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.concatenate([np.atleast_1d(field.forward(pts[i:i + chunk]))
                           for i in range(0, len(pts), chunk)])
    return vals.reshape(tuple(res)), (hi - lo) / (res - 1)


def clean_mesh(vertices, faces, decimals=9):
    """Merge coincident vertices and drop degenerate or repeated triangles."""
    key = np.round(vertices, decimals)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    # keep the first original coordinate of each merged vertex
    first = np.full(len(uniq), len(vertices))
    np.minimum.at(first, inv, np.arange(len(vertices)))
    verts = vertices[first]
    f = inv[faces]
    ok = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    f = f[ok]
    v = verts[f]
    area2 = np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    f = f[area2 > 0]
    _, first_face = np.unique(np.sort(f, axis=1), axis=0, return_index=True)
    f = f[np.sort(first_face)]
    used, remap = np.unique(f, return_inverse=True)
    return verts[used], remap.reshape(f.shape).astype(np.int64)


def extract_mesh(field, bounds, resolution=64, level=0.0):
    """Triangulate ``{field = level}`` inside ``bounds`` with marching cubes.

    Outward orientation follows the field gradient (negative inside).
    """
    if np.any(np.asarray(resolution) < 8):
        raise ValueError("marching cubes needs at least 8 samples per axis")
    lo, hi = (np.asarray(b, float) for b in bounds)
    values, spacing = evaluate_on_grid(field, lo, hi, resolution)
    if not (values.min() < level < values.max()):
        raise EmptyLevelSetError("empty level set")
    verts, faces, _, _ = marching_cubes(values, level=level, spacing=tuple(spacing),
                                        gradient_direction="ascent")
    verts = verts + lo
    # skimage winds "ascent" faces toward decreasing values; reverse for outward normals
    verts, faces = clean_mesh(verts, faces[:, ::-1])
    if len(faces) == 0:
        raise EmptyLevelSetError("empty level set")
    _, J = field.value_and_jacobian(verts)
    normals = J / np.maximum(np.linalg.norm(J, axis=1, keepdims=True), 1e-300)
    return TriangleMesh(verts, faces, normals)


def chamfer(a, b):
    """Symmetric Chamfer distance: mean of the two directed mean NN distances."""
    a = np.asarray(a, float).reshape(-1, 3)
    b = np.asarray(b, float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty point set")
    dab, _ = cKDTree(b).query(a)
    dba, _ = cKDTree(a).query(b)
    return 0.5 * (float(dab.mean()) + float(dba.mean()))
