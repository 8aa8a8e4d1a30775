import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from sartomo.errors import EmptyPointCloudError
from sartomo.grid import VoxelGrid
from sartomo.inversion import FusedImage, SubApertureImage
from sartomo.pointcloud import (
    NORMAL_RADIUS,
    OrientedPointCloud,
    build_cloud,
    estimate_normals,
    max_response_views,
    threshold_points,
)
from sartomo.simulate import look_vectors

GRID = VoxelGrid((0.0, 0.0, 0.0), (0.2, 0.2, 0.2), (6, 5, 4))


def fused(values):
    return FusedImage(np.asarray(values, float).reshape(GRID.dims), GRID)


def test_paper_radius():
    assert NORMAL_RADIUS == 0.3


class TestThreshold:
    def test_uniform_volume_returns_all(self):
        pts, mags, idx = threshold_points(fused(np.full(GRID.size, 2.0)), tau=2.0)
        assert len(pts) == GRID.size
        assert np.array_equal(pts, GRID.centers())

    def test_one_hot(self):
        v = np.zeros(GRID.size)
        v[37] = 5.0
        pts, mags, idx = threshold_points(fused(v), tau=2.5)
        assert len(pts) == 1
        assert np.array_equal(pts[0], GRID.centers()[37])
        assert mags[0] == 5.0

    @pytest.mark.parametrize("seed", range(5))
    def test_quantile_matches_sort_oracle(self, seed):
        grid = VoxelGrid((0, 0, 0), (1, 1, 1), (20, 20, 20))
        vals = np.random.default_rng(seed).random(grid.size)
        pts, _, idx = threshold_points(FusedImage(vals.reshape(grid.dims), grid), quantile=0.99)
        n_keep = math.ceil(0.01 * grid.size)
        order = sorted(range(grid.size), key=lambda i: -vals[i])
        assert sorted(idx.tolist()) == sorted(order[:n_keep])

    def test_empty(self):
        with pytest.raises(EmptyPointCloudError, match="empty point cloud"):
            threshold_points(fused(np.ones(GRID.size)), tau=3.0)
        with pytest.raises(EmptyPointCloudError):
            threshold_points(fused(np.zeros(GRID.size)), quantile=0.5)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            threshold_points(fused(np.ones(GRID.size)), tau=0.0)
        with pytest.raises(ValueError):
            threshold_points(fused(np.ones(GRID.size)), quantile=1.0)
        with pytest.raises(ValueError):
            threshold_points(fused(np.ones(GRID.size)))


def images_from(mags, thetas, phis):
    return [SubApertureImage(m, np.asarray(a, complex).reshape(GRID.dims), GRID, t, p)
            for m, (a, t, p) in enumerate(zip(mags, thetas, phis))]


class TestViews:
    def test_single_subaperture(self):
        imgs = images_from([np.random.default_rng(0).random(GRID.size)], [0.3], [0.5])
        v = max_response_views(imgs, np.arange(10))
        assert np.allclose(v, look_vectors(0.3, 0.5))

    def test_argmax_picks_second(self):
        a, b = np.zeros(GRID.size), np.zeros(GRID.size)
        b[4] = 3.0
        imgs = images_from([a, b], [0.0, 1.0], [0.1, 0.2])
        v = max_response_views(imgs, np.array([4]))
        assert np.allclose(v[0], look_vectors(1.0, 0.2))

    def test_ties_go_to_lowest_index(self):
        a = np.ones(GRID.size)
        imgs = images_from([a, a], [0.0, 1.0], [0.1, 0.2])
        assert np.allclose(max_response_views(imgs, np.array([0]))[0], look_vectors(0.0, 0.1))

    def test_loop_oracle(self):
        rng = np.random.default_rng(3)
        mags = rng.random((8, GRID.size))
        th, ph = rng.uniform(0, 6, 8), rng.uniform(0.3, 0.6, 8)
        imgs = images_from(mags, th, ph)
        pts = rng.choice(GRID.size, 10, replace=False)
        got = max_response_views(imgs, pts)
        for k, v in enumerate(pts):
            best = max(range(8), key=lambda m: (mags[m, v], -m))
            expect = [math.cos(ph[best]) * math.cos(th[best]), math.sin(th[best]) * math.cos(ph[best]),
                      math.sin(ph[best])]
            assert got[k] == pytest.approx(expect, abs=1e-12)


class TestNormals:
    def test_coplanar_points(self):
        pts = np.array([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0], [0.1, 0.1, 0]], float)
        views = np.tile([0, 0, 1.0], (4, 1))
        n = estimate_normals(pts, views)
        assert np.allclose(n, [0, 0, 1], atol=1e-12)

    def test_isolated_point_uses_view(self):
        pts = np.array([[0, 0, 0], [5, 5, 5]], float)
        views = np.array([[0.6, 0.8, 0], [0, 1, 0]])
        assert np.allclose(estimate_normals(pts, views), views)

    def test_two_neighbors_fall_back(self):
        pts = np.array([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]], float)
        views = np.tile([1.0, 0, 0], (3, 1))
        assert np.allclose(estimate_normals(pts, views), views)

    def test_collinear_falls_back(self):
        pts = np.array([[0.05 * k, 0, 0] for k in range(5)], float)
        views = np.tile([0, 0.6, 0.8], (5, 1))
        assert np.allclose(estimate_normals(pts, views), views)

    def test_sphere_normals(self):
        rng = np.random.default_rng(0)
        d = rng.normal(size=(200, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        n = estimate_normals(d, d)
        ang = np.degrees(np.arccos(np.clip(np.sum(n * d, axis=1), -1, 1)))
        assert ang.mean() < 10.0

    def test_unit_norm_and_lit_side(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 1, (300, 3))
        views = rng.normal(size=(300, 3))
        views /= np.linalg.norm(views, axis=1, keepdims=True)
        n = estimate_normals(pts, views)
        assert np.allclose(np.linalg.norm(n, axis=1), 1, atol=1e-6)
        assert np.all(np.sum(n * views, axis=1) >= 0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_rotation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-0.4, 0.4, (60, 3)) * [1, 1, 0.2]
        views = np.tile([0, 0, 1.0], (60, 1)) + 0.1 * rng.normal(size=(60, 3))
        views /= np.linalg.norm(views, axis=1, keepdims=True)
        R = Rotation.random(random_state=seed).as_matrix()
        n = estimate_normals(pts, views)
        nr = estimate_normals(pts @ R.T, views @ R.T)
        assert np.allclose(nr, n @ R.T, atol=1e-6)


class TestCloud:
    def test_build_and_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        mags = rng.random((3, GRID.size))
        imgs = images_from(mags, [0.0, 1.0, 2.0], [0.5, 0.5, 0.5])
        f = FusedImage(mags.sum(0).reshape(GRID.dims), GRID)
        cloud = build_cloud(f, imgs, quantile=0.8)
        assert len(cloud) == math.ceil(0.2 * GRID.size)
        assert np.allclose(np.linalg.norm(cloud.normals, axis=1), 1, atol=1e-6)
        assert np.allclose(np.linalg.norm(cloud.view_dirs, axis=1), 1, atol=1e-6)
        path = tmp_path / "c.ply"
        cloud.save(path)
        back = OrientedPointCloud.load(path)
        for name in ("points", "normals", "view_dirs", "magnitudes"):
            assert np.allclose(getattr(back, name), getattr(cloud, name), rtol=0, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            OrientedPointCloud(np.zeros((2, 3)), np.zeros((1, 3)), np.zeros((2, 3)), np.zeros(2))
