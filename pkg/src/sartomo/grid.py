"""Regular voxel grids over the region of interest."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .simulate import SPEED_OF_LIGHT


@dataclass(frozen=True)
class VoxelGrid:
    """Voxel centers at ``origin + spacing * (ix, iy, iz)``."""

    origin: tuple
    spacing: tuple
    dims: tuple

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        dims = tuple(int(v) for v in self.dims)
        if len(origin) != 3 or len(spacing) != 3 or len(dims) != 3:
            raise GeometryError("grid origin, spacing and dims need three components")
        if min(spacing) <= 0:
            raise GeometryError("grid spacing must be positive")
        if max(spacing) / min(spacing) > 1.5:
            raise GeometryError("grid voxels must be cube-like (spacing ratio <= 1.5)")
        if min(dims) < 1:
            raise GeometryError("grid dims must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "dims", dims)

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def center(self):
        """Position of voxel ``dims // 2`` (the NUFFT phase reference)."""
        return np.asarray(self.origin) + np.asarray(self.spacing) * (np.asarray(self.dims) // 2)

    def axes(self):
        return [o + s * np.arange(n) for o, s, n in zip(self.origin, self.spacing, self.dims)]

    def centers(self):
        """All voxel centers, shape ``(N_x * N_y * N_z, 3)`` in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def index_of(self, points):
        """Nearest voxel index triples for ``points`` (no bounds check)."""
        rel = (np.asarray(points, float) - np.asarray(self.origin)) / np.asarray(self.spacing)
        return np.rint(rel).astype(np.int64)

    def contains_index(self, idx):
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)

    def bounds(self):
        o, s, d = np.asarray(self.origin), np.asarray(self.spacing), np.asarray(self.dims)
        return o - s / 2, o + s * (d - 0.5)

    def to_dict(self):
        return {"origin": list(self.origin), "spacing": list(self.spacing), "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["origin"], d["spacing"], d["dims"])


def range_resolution(bandwidth, c=SPEED_OF_LIGHT):
    return c / (2.0 * bandwidth)


def auto_grid(bounds, bandwidth, c=SPEED_OF_LIGHT, spacing=None, max_dim=None):
    """Cube voxels of the range resolution ``c / (2 B)`` covering ``bounds``.

    The grid is centered on the bounds; ``max_dim`` caps each axis by coarsening
    the spacing.
    """
    lo, hi = (np.asarray(b, float) for b in bounds)
    if spacing is None:
        spacing = range_resolution(bandwidth, c)
    extent = hi - lo
    if max_dim is not None:
        spacing = max(spacing, float(extent.max()) / (max_dim - 1))
    dims = [max(1, math.ceil(e / spacing - 1e-9) + 1) for e in extent]
    mid = (lo + hi) / 2
    origin = mid - spacing * (np.asarray(dims) - 1) / 2
    return VoxelGrid(tuple(origin), (spacing,) * 3, tuple(dims))
