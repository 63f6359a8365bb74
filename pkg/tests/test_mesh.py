import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.config import settings
from src.errors import ConfigError, ResolutionError, ResourceLimitError
from src.geometry.mesh import cylinder, icosphere


# ===== ICOSPHERE =====


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_icosphere_counts(meshes, level):
    mesh = meshes[level]
    assert mesh.n_vertices == 10 * 4**level + 2
    assert mesh.n_triangles == 20 * 4**level
    assert mesh.euler_characteristic() == 2
    assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-14)


def test_icosphere_is_outward_oriented(meshes):
    mesh = meshes[2]
    assert np.all(np.einsum("fa,fa->f", mesh.normals, mesh.centroids) > 0)


def test_area_converges_to_sphere(meshes):
    errors = [4.0 * math.pi - meshes[level].areas.sum() for level in range(4)]
    assert all(e > 0 for e in errors)
    assert errors[3] / (4.0 * math.pi) < 0.01
    for coarse, fine in zip(errors, errors[1:]):
        assert coarse / fine > 2.5


def test_mesh_size_halves(meshes):
    h = [meshes[level].h for level in range(4)]
    assert h[0] == pytest.approx(1.0515, abs=1e-3)
    for coarse, fine in zip(h, h[1:]):
        assert 0.4 < fine / coarse < 0.65


def test_stiffness_and_mass(meshes):
    mesh = meshes[2]
    K, M = mesh.stiffness, mesh.mass
    assert abs(K - K.T).max() < 1e-14
    assert_allclose(K @ np.ones(mesh.n_vertices), 0.0, atol=1e-12)
    assert M.sum() == pytest.approx(mesh.areas.sum(), rel=1e-13)
    assert mesh.lumped_mass.sum() == pytest.approx(mesh.areas.sum(), rel=1e-13)
    assert mesh.integrate(np.ones(mesh.n_vertices)) == pytest.approx(mesh.areas.sum(), rel=1e-13)


def test_gradient_of_linear_field_is_tangential_part(meshes):
    mesh = meshes[1]
    a = np.array([0.3, -1.2, 0.7])
    grad = mesh.gradient(mesh.vertices @ a)
    expected = a[None, :] - (mesh.normals @ a)[:, None] * mesh.normals
    assert_allclose(grad, expected, atol=1e-12)


def test_stiffness_matches_gradient_energy(meshes, rng):
    mesh = meshes[2]
    f = rng.standard_normal(mesh.n_vertices)
    energy = np.sum(mesh.areas * np.sum(mesh.gradient(f) ** 2, axis=1))
    assert f @ (mesh.stiffness @ f) == pytest.approx(energy, rel=1e-12)


def test_interpolate_reproduces_vertex_values(meshes, rng):
    mesh = meshes[2]
    values = rng.standard_normal((mesh.n_vertices, 3))
    assert_allclose(mesh.interpolate(values, mesh.vertices), values, atol=1e-10)


def test_interpolate_linear_field_at_centroids(meshes):
    mesh = meshes[2]
    a = np.array([1.0, 2.0, -0.5])
    points = mesh.centroids / np.linalg.norm(mesh.centroids, axis=1, keepdims=True)
    triangles, bary = mesh.locate(points)
    assert_allclose(triangles, np.arange(mesh.n_triangles))
    assert_allclose(bary, 1.0 / 3.0, atol=1e-12)
    assert_allclose(mesh.interpolate(mesh.vertices @ a, points), mesh.centroids @ a, atol=1e-12)


def test_level_guards():
    with pytest.raises(ConfigError):
        icosphere(-1)
    with pytest.raises(ResourceLimitError):
        icosphere(settings.max_mesh_level + 1)


def test_mesh_cache_round_trip(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "mesh_cache_dir", str(tmp_path))
    built = icosphere(1, use_cache=True)
    assert (tmp_path / "icosphere-L1.npz").exists()
    loaded = icosphere(1, use_cache=True)
    assert_allclose(loaded.vertices, built.vertices)
    assert np.array_equal(loaded.triangles, built.triangles)


def test_corrupt_mesh_cache_is_rebuilt(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "mesh_cache_dir", str(tmp_path))
    (tmp_path / "icosphere-L1.npz").write_bytes(b"not an archive")
    mesh = icosphere(1, use_cache=True)
    assert mesh.n_vertices == 42


# ===== CYLINDER =====


def test_cylinder_quadrature():
    grid = cylinder(3.0, 61, 16)
    T, TH = grid.mesh_grid
    assert grid.integrate(np.ones_like(T)) == pytest.approx(2.0 * 3.0 * 2.0 * math.pi, rel=1e-13)
    assert grid.integrate(np.cos(TH) ** 2) == pytest.approx(6.0 * math.pi, rel=1e-12)
    assert grid.integrate(T) == pytest.approx(0.0, abs=1e-12)


def test_cylinder_spectral_theta_derivative():
    grid = cylinder(1.0, 17, 16)
    T, TH = grid.mesh_grid
    assert_allclose(grid.d_theta(np.sin(2.0 * TH) * T), 2.0 * np.cos(2.0 * TH) * T, atol=1e-12)
    field = np.stack([np.cos(TH), np.sin(3.0 * TH)], axis=-1)
    expected = np.stack([-np.sin(TH), 3.0 * np.cos(3.0 * TH)], axis=-1)
    assert_allclose(grid.d_theta(field), expected, atol=1e-12)


def test_cylinder_energy_of_linear_field():
    grid = cylinder(2.0, 33, 8)
    T, _ = grid.mesh_grid
    assert grid.dirichlet_energy(T) == pytest.approx(2.0 * math.pi * 2.0, rel=1e-12)


@pytest.mark.parametrize("n_t,n_theta", [(8, 16), (32, 6), (32, 15)])
def test_coarse_cylinder_is_rejected(n_t, n_theta):
    with pytest.raises(ResolutionError):
        cylinder(1.0, n_t, n_theta)


def test_nonpositive_cylinder_length_is_rejected():
    with pytest.raises(ResolutionError):
        cylinder(0.0, 32, 16)
