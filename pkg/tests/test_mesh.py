import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chamfer_bruteforce
from sartomo.errors import EmptyLevelSetError
from sartomo.fields import BoxField, PlaneField, SphereField
from sartomo.io import read_ply
from sartomo.mesh import TriangleMesh, chamfer, clean_mesh, extract_mesh
from sartomo.pipeline import load_mesh

UNIT = (-np.ones(3), np.ones(3))


def cell_diagonal(bounds, res):
    lo, hi = bounds
    return float(np.linalg.norm((hi - lo) / (res - 1)))


class TestMarchingCubes:
    def test_sphere_area_and_genus(self):
        mesh = extract_mesh(SphereField(0.8), UNIT, 64)
        assert mesh.area() == pytest.approx(4 * math.pi * 0.8**2, rel=0.03)
        assert mesh.euler_characteristic() == 2
        assert mesh.is_watertight()

    def test_plane_vertices_within_half_cell(self):
        mesh = extract_mesh(PlaneField(offset=0.013), UNIT, 33)
        half = 0.5 * 2.0 / 32
        assert np.all(np.abs(mesh.vertices[:, 2] - 0.013) <= half)

    def test_residual_shrinks_with_resolution(self):
        field = SphereField(0.63)
        errs = [np.abs(field.forward(extract_mesh(field, UNIT, r).vertices)).max() for r in (16, 32)]
        assert errs[1] < errs[0]

    @pytest.mark.parametrize("res", [8, 24])
    def test_residual_within_cell_diagonal(self, res):
        field = BoxField((0.5, 0.35, 0.6))
        mesh = extract_mesh(field, UNIT, res)
        assert np.abs(field.forward(mesh.vertices)).max() <= cell_diagonal(UNIT, res)

    @pytest.mark.parametrize("field", [SphereField(0.7), BoxField((0.6, 0.4, 0.5)),
                                       SphereField(0.3, center=(0.2, -0.1, 0.3))])
    def test_watertight_closed_fields(self, field):
        mesh = extract_mesh(field, UNIT, 32)
        assert mesh.is_watertight()

    def test_indices_and_areas(self):
        mesh = extract_mesh(BoxField((0.6, 0.4, 0.5)), UNIT, 20)
        assert mesh.faces.min() >= 0 and mesh.faces.max() < mesh.n_vertices
        assert mesh.face_areas().min() > 1e-12
        assert np.allclose(np.linalg.norm(mesh.normals, axis=1), 1)

    def test_outward_orientation(self):
        mesh = extract_mesh(SphereField(0.7), UNIT, 24)
        v = mesh.vertices[mesh.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        assert np.all(np.einsum("ij,ij->i", n, v.mean(axis=1)) > 0)

    def test_empty_level_set(self):
        with pytest.raises(EmptyLevelSetError, match="empty level set"):
            extract_mesh(SphereField(5.0), UNIT, 16)

    def test_resolution_too_small(self):
        with pytest.raises(ValueError):
            extract_mesh(SphereField(0.5), UNIT, 7)


class TestCleanMesh:
    def test_merges_and_drops_degenerates(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1e-12, 0, 0], [2, 2, 2]], float)
        f = np.array([[0, 1, 2], [3, 1, 2], [0, 3, 1]])
        verts, faces = clean_mesh(v, f)
        assert len(faces) == 1 and len(verts) == 3


class TestChamfer:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=(50, 3))
        assert chamfer(a, a) == 0.0

    def test_unit_translation(self):
        a = np.array([[0.0, 0, 0], [5, 0, 0], [0, 5, 0]])
        assert chamfer(a, a + [0, 0, 1.0]) == 1.0

    @pytest.mark.parametrize("seed", range(3))
    def test_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(55, 3))
        assert chamfer(a, b) == pytest.approx(chamfer_bruteforce(a, b), abs=1e-12)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 30), st.integers(1, 30))
    @settings(max_examples=30, deadline=None)
    def test_symmetry(self, seed, n, m):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
        assert chamfer(a, b) == chamfer(b, a)

    def test_empty(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


def test_mesh_files_roundtrip(tmp_path):
    mesh = extract_mesh(SphereField(0.6), UNIT, 12)
    mesh.save(tmp_path / "m.ply")
    mesh.save(tmp_path / "m.obj")
    back = load_mesh(tmp_path / "m.ply")
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-12)
    assert np.array_equal(back.faces, mesh.faces)
    cols, _ = read_ply(tmp_path / "m.ply")
    assert {"nx", "ny", "nz"} <= set(cols)
    lines = (tmp_path / "m.obj").read_text().splitlines()
    assert sum(line.startswith("v ") for line in lines) == mesh.n_vertices
    faces = [line for line in lines if line.startswith("f ")]
    assert len(faces) == mesh.n_faces
    # OBJ indices are 1-based
    first = [int(tok.split("/")[0]) for tok in faces[0].split()[1:]]
    assert first == list(mesh.faces[0] + 1)


def test_sample_on_surface():
    mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    pts = mesh.sample(500, np.random.default_rng(0))
    assert np.all(pts[:, 2] == 0) and np.all(pts[:, :2].sum(axis=1) <= 1 + 1e-12)
    assert np.all(pts[:, :2] >= -1e-12)
