import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from src.errors import ConfigError, GeometryError
from src.geometry.manifold import (
    AugmentedEmbedding,
    DEFAULT_AUGMENTATION_LAMBDA,
    CliffordTorus,
    RoundSphere,
    augment,
    balanced_directions,
    fd_second_fundamental_form,
    get_manifold,
    pullback_metric_defect,
    sample_pairing,
)

ambient3 = arrays(np.float64, (3,), elements=st.floats(-3.0, 3.0)).filter(lambda x: np.linalg.norm(x) > 0.1)
ambient4 = arrays(np.float64, (4,), elements=st.floats(-3.0, 3.0)).filter(
    lambda x: np.linalg.norm(x[:2]) > 0.1 and np.linalg.norm(x[2:]) > 0.1
)


# ===== PROJECTORS =====


@settings(deadline=None, max_examples=50)
@given(x=ambient3)
def test_sphere_projector_identities(x):
    sphere = RoundSphere(2)
    p = sphere.closest_point(x)
    P = sphere.tangent_projection(p)
    assert_allclose(P @ P, P, atol=1e-12)
    assert_allclose(P, P.T, atol=1e-12)
    assert np.trace(P) == pytest.approx(2.0, abs=1e-12)
    assert_allclose(P @ p, 0.0, atol=1e-12)


@settings(deadline=None, max_examples=50)
@given(x=ambient4)
def test_clifford_projector_identities(x):
    torus = CliffordTorus()
    p = torus.closest_point(x)
    P = torus.tangent_projection(p)
    assert_allclose(P @ P, P, atol=1e-12)
    assert_allclose(P, P.T, atol=1e-12)
    assert np.trace(P) == pytest.approx(2.0, abs=1e-12)


def test_clifford_reference_projector_kernel():
    torus = CliffordTorus()
    r = 1.0 / math.sqrt(2.0)
    p = np.array([r, 0.0, r, 0.0])
    P = torus.tangent_projection(p)
    assert np.linalg.matrix_rank(P, tol=1e-10) == 2
    assert_allclose(P @ np.array([1.0, 0.0, 0.0, 0.0]), 0.0, atol=1e-12)
    assert_allclose(P @ np.array([0.0, 0.0, 1.0, 0.0]), 0.0, atol=1e-12)


def test_sphere_pole_projector():
    P = RoundSphere(2).tangent_projection(np.array([0.0, 0.0, 1.0]))
    assert_allclose(P, np.diag([1.0, 1.0, 0.0]), atol=1e-14)


def test_off_manifold_point_is_rejected():
    with pytest.raises(GeometryError):
        RoundSphere(2).tangent_projection(np.array([0.0, 0.0, 1.1]))


def test_non_tangent_vector_is_rejected():
    sphere = RoundSphere(2)
    p = np.array([0.0, 0.0, 1.0])
    with pytest.raises(GeometryError):
        sphere.second_fundamental_form(p, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))


# ===== SECOND FUNDAMENTAL FORM =====


def test_sphere_sff_formula(rng):
    sphere = RoundSphere(2)
    p = sphere.random_points(20, rng)
    v = sphere.random_unit_tangents(p, rng)
    w = sphere.random_unit_tangents(p, rng)
    A = sphere.second_fundamental_form(p, v, w)
    assert_allclose(A, -np.sum(v * w, axis=1, keepdims=True) * p, atol=1e-14)


@pytest.mark.parametrize("manifold", [RoundSphere(2), CliffordTorus()], ids=["sphere2", "clifford"])
def test_fd_sff_matches_analytic(manifold, rng):
    p = manifold.random_points(10, rng)
    v = manifold.random_unit_tangents(p, rng)
    w = manifold.random_unit_tangents(p, rng)
    exact = manifold.second_fundamental_form(p, v, w)
    approx = fd_second_fundamental_form(manifold, p, v, w)
    assert_allclose(approx, exact, atol=1e-5)


def test_sff_is_normal_and_symmetric(clifford, rng):
    p = clifford.random_points(10, rng)
    v = clifford.random_unit_tangents(p, rng)
    w = clifford.random_unit_tangents(p, rng)
    A = clifford.second_fundamental_form(p, v, w)
    P = clifford.tangent_projection(p)
    assert_allclose(np.einsum("vij,vj->vi", P, A), 0.0, atol=1e-12)
    assert_allclose(A, clifford.second_fundamental_form(p, w, v), atol=1e-14)


def test_clifford_orthogonal_circles_have_zero_pairing():
    torus = CliffordTorus()
    p, v, w = torus.orthogonal_circle_pair(0.3, 1.1)
    pairing = np.dot(torus.second_fundamental_form(p, v, v), torus.second_fundamental_form(p, w, w))
    assert abs(pairing) < 1e-14
    assert abs(np.dot(torus.curvature_term(p, v[None, :], w), w)) < 1e-14


def test_tangent_frame_is_orthonormal(clifford, rng):
    p = clifford.random_points(50, rng)
    frame = clifford.tangent_frame(p)
    gram = np.einsum("vam,vbm->vab", frame, frame)
    assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-12)
    P = clifford.tangent_projection(p)
    assert_allclose(np.einsum("vij,vaj->vai", P, frame), frame, atol=1e-12)


# ===== AUGMENTATION =====


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5, 7])
def test_balanced_directions_resolve_identity(m):
    directions, weights, _ = balanced_directions(m)
    total = np.einsum("d,di,dj->ij", weights, directions, directions)
    assert_allclose(total, np.eye(m), atol=1e-14)
    assert np.all(weights > 0)


@pytest.mark.parametrize("key", ["sphere2", "clifford"])
def test_augmented_jacobian_is_isometric(key, rng):
    embedding = AugmentedEmbedding(get_manifold(key), 4.0)
    x = embedding.base.random_points(25, rng)
    J = embedding.jacobian(x)
    gram = np.einsum("via,vib->vab", J, J)
    assert_allclose(gram, np.broadcast_to(np.eye(embedding.base.ambient_dim), gram.shape), atol=1e-12)
    assert pullback_metric_defect(embedding, 1000, rng) < 1e-10


def test_augmented_immersion_round_trips(rng):
    embedding = AugmentedEmbedding(CliffordTorus(), 4.0)
    x = embedding.base.random_points(25, rng)
    y = embedding.immerse(x)
    assert_allclose(embedding.base_point(y), x, atol=1e-14)
    assert_allclose(embedding.closest_point(y), y, atol=1e-12)


def test_augmented_sff_matches_finite_differences(rng):
    embedding = AugmentedEmbedding(RoundSphere(2), 2.0)
    p = embedding.random_points(5, rng)
    v = embedding.random_unit_tangents(p, rng)
    w = embedding.random_unit_tangents(p, rng)
    exact = embedding.second_fundamental_form(p, v, w)
    assert_allclose(fd_second_fundamental_form(embedding, p, v, w), exact, atol=1e-4)


def test_clifford_augmentation_default_is_positive():
    embedding = augment(CliffordTorus(), 4.0, samples=5000)
    floor = embedding.analytic_gain()
    assert floor == pytest.approx(4.0 / 3.0)
    assert embedding.positivity_constant >= floor - 1e-10
    assert embedding.positivity_constant >= 1.0


def test_clifford_augmentation_small_lambda_still_positive():
    embedding = augment(CliffordTorus(), 2.0, samples=5000)
    assert embedding.positivity_constant > 0.0
    assert embedding.positivity_constant >= 1.0 / 3.0 - 1e-10


def test_plain_clifford_pairing_reaches_zero(rng):
    pairing = sample_pairing(CliffordTorus(), 5000, rng)
    assert pairing["min"] >= -1e-12
    assert pairing["min"] < 0.05


def test_lambda_below_one_is_rejected():
    with pytest.raises(GeometryError):
        AugmentedEmbedding(RoundSphere(2), 0.5)


# ===== REGISTRY =====


def test_registry_keys():
    assert get_manifold("sphere2").ambient_dim == 3
    assert get_manifold("clifford").ambient_dim == 4
    augmented = get_manifold("clifford+aug:4")
    assert isinstance(augmented, AugmentedEmbedding)
    assert augmented.lam == 4.0
    assert get_manifold("sphere2+aug").lam == 4.0


@pytest.mark.parametrize("key", ["torus", "sphere2+twist", "clifford+aug:x"])
def test_registry_rejects_unknown_keys(key):
    with pytest.raises(ConfigError):
        get_manifold(key)


def test_default_augmentation_clears_unit_floor_on_clifford():
    augmented = get_manifold("clifford+aug")
    assert augmented.lam == DEFAULT_AUGMENTATION_LAMBDA
    assert augmented.analytic_gain() >= 1.0
    assert AugmentedEmbedding(CliffordTorus(), math.sqrt(12.0)).analytic_gain() == pytest.approx(1.0)
    assert augmented.ambient_dim == 4 + 2 * len(augmented.weights)
