"""Thresholded scatterer point clouds with viewing directions and PCA normals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyPointCloudError
from .io import PLY_CLOUD_PROPS, read_ply, write_ply_points
from .simulate import look_vectors

NORMAL_RADIUS = 0.3


@dataclass
class OrientedPointCloud:
    points: np.ndarray
    normals: np.ndarray
    view_dirs: np.ndarray
    magnitudes: np.ndarray

    def __post_init__(self):
        n = len(self.points)
        if not (len(self.normals) == len(self.view_dirs) == len(self.magnitudes) == n):
            raise ValueError("point cloud arrays differ in length")

    def __len__(self):
        return len(self.points)

    def save(self, path):
        cols = [self.points, self.normals, self.magnitudes[:, None], self.view_dirs]
        write_ply_points(path, cols, PLY_CLOUD_PROPS)

    @classmethod
    def load(cls, path):
        cols, _ = read_ply(path)
        get = lambda *names: np.column_stack([cols[n] for n in names])  # noqa: E731
        n = len(cols["x"])
        mags = cols.get("magnitude", np.ones(n))
        pts = get("x", "y", "z")
        nrm = get("nx", "ny", "nz") if "nx" in cols else np.zeros((n, 3))
        vd = get("vx", "vy", "vz") if "vx" in cols else nrm.copy()
        return cls(pts, nrm, vd, np.asarray(mags, float))


def threshold_points(fused, tau=None, quantile=None):
    """Voxel centers whose fused magnitude is at least the threshold.

    With ``quantile=q`` the threshold is the magnitude of the ``ceil((1-q) N)``-th
    largest voxel (ties at that value are all kept); zero-valued voxels are
    never returned.
    """
    values = np.asarray(fused.values, float).ravel()
    if (tau is None) == (quantile is None):
        raise ValueError("give exactly one of tau or quantile")
    if quantile is not None:
        if not 0 < quantile < 1:
            raise ValueError("quantile must lie in (0, 1)")
        n_keep = max(1, math.ceil((1.0 - quantile) * values.size - 1e-9))
        tau = np.partition(values, values.size - n_keep)[values.size - n_keep]
        if tau <= 0:
            positive = values[values > 0]
            if positive.size == 0:
                raise EmptyPointCloudError("empty point cloud")
            tau = positive.min()
    elif tau <= 0:
        raise ValueError("tau must be positive")
    idx = np.flatnonzero(values >= tau)
    if idx.size == 0:
        raise EmptyPointCloudError("empty point cloud")
    centers = fused.grid.centers()[idx]
    return centers, values[idx], idx


def max_response_views(images, flat_index):
    """Look vector of the sub-aperture with the largest ``|S_m|`` at each voxel.

    Ties go to the lowest sub-aperture index.
    """
    mags = np.stack([np.abs(img.values).ravel()[flat_index] for img in images])  # (M, n)
    best = np.argmax(mags, axis=0)
    theta = np.array([img.theta_mean for img in images])
    phi = np.array([img.phi_mean for img in images])
    return look_vectors(theta[best], phi[best])


def estimate_normals(points, view_dirs, radius=NORMAL_RADIUS, min_neighbors=3):
    """Local-PCA normals oriented toward the viewing direction.

    A point needs at least ``min_neighbors`` other points within ``radius``;
    otherwise, or when its neighborhood is collinear, the normal is its view
    direction.
    """
    points = np.asarray(points, float)
    view_dirs = np.asarray(view_dirs, float)
    normals = view_dirs / np.linalg.norm(view_dirs, axis=1, keepdims=True)
    if len(points) == 0:
        return normals
    tree = cKDTree(points)
    hoods = tree.query_ball_point(points, radius)
    for i, hood in enumerate(hoods):
        if len(hood) - 1 < min_neighbors:
            continue
        nb = points[hood]
        centered = nb - nb.mean(axis=0)
        evals, evecs = np.linalg.eigh(centered.T @ centered / len(nb))
        if evals[1] - evals[0] <= 1e-9 * max(evals[2], 1e-300):
            continue
        n = evecs[:, 0]
        if n @ view_dirs[i] < 0:
            n = -n
        normals[i] = n / np.linalg.norm(n)
    return normals


def build_cloud(fused, images, tau=None, quantile=None, radius=NORMAL_RADIUS):
    """Threshold, attach view directions, estimate normals."""
    pts, mags, idx = threshold_points(fused, tau=tau, quantile=quantile)
    views = max_response_views(images, idx)
    normals = estimate_normals(pts, views, radius)
    return OrientedPointCloud(pts, normals, views, mags)
