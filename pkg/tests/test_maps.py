import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import ConfigError, GeometryError
from src.geometry.mesh import cylinder
from src.service.maps_service import (
    AmbientFamily,
    MapService,
    Mobius,
    NeckChart,
    RationalFamily,
    complex_to_sphere,
    homogeneous_to_sphere,
    parse_chart,
    parse_complex,
    sphere_to_homogeneous,
)


# ===== COORDINATES AND CHARTS =====


def test_stereographic_round_trip(meshes):
    x = meshes[2].vertices
    assert_allclose(homogeneous_to_sphere(*sphere_to_homogeneous(x)), x, atol=1e-14)


def test_stereographic_poles():
    assert_allclose(complex_to_sphere(0.0), [0.0, 0.0, -1.0], atol=1e-15)
    assert_allclose(homogeneous_to_sphere(1.0, 0.0), [0.0, 0.0, 1.0], atol=1e-15)
    assert_allclose(complex_to_sphere(1.0), [1.0, 0.0, 0.0], atol=1e-15)


def test_mobius_inverse_and_composition(rng):
    m = Mobius(1.0 + 2.0j, -0.5, 0.3j, 2.0)
    z = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    assert_allclose(m.inverse()(m(z)), z, atol=1e-12)
    other = Mobius.dilation(0.5j, 3.0)
    assert_allclose(m.then(other)(z), other(m(z)), atol=1e-12)


def test_degenerate_mobius_is_rejected():
    with pytest.raises(GeometryError):
        Mobius(1.0, 2.0, 2.0, 4.0)
    with pytest.raises(GeometryError):
        Mobius.dilation(0.0, 0.0)


def test_neck_chart_inverse():
    chart = NeckChart(0.5 + 0.25j, 0.1)
    t = np.array([0.0, 1.0, 2.5])
    theta = np.array([0.3, 2.0, 5.0])
    back_t, back_theta = chart.inverse(chart(t, theta))
    assert_allclose(back_t, t, atol=1e-12)
    assert_allclose(back_theta, theta, atol=1e-12)


def test_parse_chart_and_complex():
    assert parse_complex("1+2i") == 1 + 2j
    assert parse_complex(" -0.5 ") == -0.5
    chart = parse_chart("dilation:0.5,0.1")
    assert chart(1.0) == pytest.approx(0.6)
    assert isinstance(parse_chart("neck:0,0.2"), NeckChart)
    assert parse_chart("mobius:1.5,0.5,0,1")(1.0) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        parse_chart("rotation:1")
    with pytest.raises(ConfigError):
        parse_complex("one")


# ===== FAMILIES =====


def test_identity_family(meshes):
    family = MapService.parse_family("identity")
    assert isinstance(family, RationalFamily)
    assert family.degree == 1
    assert_allclose(family.on_sphere(meshes[2].vertices), meshes[2].vertices, atol=1e-13)
    assert_allclose(family.value_at_infinity(), [0.0, 0.0, 1.0], atol=1e-15)


@pytest.mark.parametrize(
    "spec,degree",
    [
        ("rational:[1,0,0]/[1]", 2),
        ("rational:[1,0,0,-1]/[2]", 3),
        ("rational:[1]/[1,0]", 1),
        ("rational:[1,0]/[1,0.5,1]", 2),
        ("rational:[0,0,1,2i]/[1]", 1),
        ("rational:[3]/[1]", 0),
    ],
)
def test_rational_degree(spec, degree):
    assert MapService.parse_family(spec).degree == degree


def test_shared_root_is_rejected():
    with pytest.raises(GeometryError):
        MapService.parse_family("rational:[1,-1]/[1,-1]")


@pytest.mark.parametrize(
    "spec",
    ["", "polynomial:[1]", "rational:[]/[1]", "compose(identity)", "compose(shear:0.3, dilation:0,2)"],
)
def test_unknown_family_specs(spec):
    with pytest.raises(ConfigError):
        MapService.parse_family(spec)


def test_compose_with_dilation():
    family = MapService.parse_family("compose(identity, dilation:0.5,0.25)")
    assert family.degree == 1
    assert family.describe().startswith("compose(")
    z = np.array([0.0, 1.0, -2.0 + 1.0j])
    assert_allclose(family.on_plane(z), complex_to_sphere(0.5 + 0.25 * z), atol=1e-14)


def test_nested_compose_matches_product_chart():
    nested = MapService.parse_family("compose(compose(rational:[1,0,0]/[1], dilation:0,2), dilation:1,0.5)")
    z = np.array([0.3, -1.0j, 2.0])
    assert_allclose(nested.on_plane(z), complex_to_sphere((2.0 * (1.0 + 0.5 * z)) ** 2), atol=1e-12)


def test_family_target_must_match_manifold(meshes, clifford, sphere):
    with pytest.raises(ConfigError):
        MapService.from_spec(meshes[1], "identity", clifford)
    with pytest.raises(ConfigError):
        MapService.from_spec(meshes[1], "torus-test", sphere)
    u = MapService.from_spec(meshes[1], "torus-test", clifford)
    assert u.values.shape == (meshes[1].n_vertices, 4)


def test_shear_is_on_sphere(meshes, sphere):
    u = MapService.from_spec(meshes[2], "shear:0.4", sphere)
    assert isinstance(u.family, AmbientFamily)
    assert_allclose(np.linalg.norm(u.values, axis=1), 1.0, atol=1e-14)


def test_augmented_target_lifts_values(meshes):
    from src.geometry.manifold import get_manifold

    augmented = get_manifold("sphere2+aug:4")
    u = MapService.from_spec(meshes[1], "identity", augmented)
    assert u.values.shape[1] == augmented.ambient_dim
    assert_allclose(augmented.base_point(u.values), meshes[1].vertices, atol=1e-13)


def test_constant_map(meshes, sphere):
    u = MapService.from_spec(meshes[2], "constant", sphere)
    assert_allclose(u.values, np.tile(np.ones(3) / math.sqrt(3.0), (meshes[2].n_vertices, 1)))
    assert MapService.dirichlet_energy(u) == pytest.approx(0.0, abs=1e-20)
    assert MapService.harmonic_residual(u) < 1e-12


def test_constant_rational_family_is_allowed(meshes, sphere):
    u = MapService.from_spec(meshes[1], "rational:[2]/[1]", sphere)
    assert u.family.is_constant
    assert MapService.dirichlet_energy(u) == pytest.approx(0.0, abs=1e-12)


def test_map_off_manifold_is_rejected(meshes, sphere):
    from src.service.maps_service import MapField

    with pytest.raises(GeometryError):
        MapField(meshes[0], 1.1 * meshes[0].vertices, sphere, "scaled")


# ===== ENERGY =====


def test_identity_energy_is_mesh_area(meshes, sphere):
    u = MapService.from_spec(meshes[3], "identity", sphere)
    energy = MapService.dirichlet_energy(u)
    assert energy == pytest.approx(meshes[3].areas.sum(), rel=1e-12)
    assert energy == pytest.approx(4.0 * math.pi, rel=0.02)


@pytest.mark.parametrize("spec,degree", [("identity", 1), ("rational:[1,0,0]/[1]", 2), ("rational:[1,0,0,-1]/[1,0.5]", 3)])
def test_analytic_energy_is_quantized(spec, degree):
    family = MapService.parse_family(spec)
    assert MapService.analytic_energy(family) == pytest.approx(4.0 * math.pi * degree, rel=1e-6)


def test_analytic_energy_of_disk_and_dilation():
    identity = MapService.parse_family("identity")
    assert MapService.analytic_energy(identity, outer=1.0) == pytest.approx(2.0 * math.pi, rel=1e-7)
    bubble = identity.precompose(Mobius.dilation(0.3, 1e-3).inverse())
    # almost all energy of a concentrated bubble sits in a small disk around its center
    inside = MapService.analytic_energy(bubble, outer=0.1, center=0.3)
    assert inside == pytest.approx(4.0 * math.pi, rel=1e-3)
    assert inside < 4.0 * math.pi


def test_identity_residual_vanishes_on_symmetric_mesh(meshes, sphere):
    u = MapService.from_spec(meshes[1], "identity", sphere)
    assert MapService.harmonic_residual(u) < 1e-10


# ===== NECK PULLBACK AND HOPF DIFFERENTIAL =====


def test_conformal_neck_has_vanishing_hopf_differential():
    grid = cylinder(2.0, 65, 32)
    field = MapService.neck_pullback(MapService.parse_family("identity"), grid, NeckChart(0.0, 1.0))
    hopf = MapService.hopf_differential(field)
    assert np.max(np.abs(hopf["phi"])) < 1e-8
    assert np.max(np.abs(hopf["slice_imbalance"])) < 1e-8
    # energy of the identity over the annulus e^{-2} ≤ |z| ≤ e^{2}
    expected = MapService.analytic_energy(MapService.parse_family("identity"), inner=math.exp(-2.0), outer=math.exp(2.0))
    assert MapService.dirichlet_energy(field) == pytest.approx(expected, rel=2e-4)


def test_nonconformal_neck_has_hopf_imbalance(sphere):
    grid = cylinder(1.0, 33, 16)
    field = MapService.neck_pullback(AmbientFamily("shear", 0.8), grid, NeckChart(0.0, 1.0), sphere)
    assert np.max(np.abs(MapService.hopf_differential(field)["phi"])) > 1e-3


def test_neck_pullback_target_mismatch(clifford):
    grid = cylinder(1.0, 33, 16)
    with pytest.raises(ConfigError):
        MapService.neck_pullback(MapService.parse_family("identity"), grid, NeckChart(0.0, 1.0), clifford)


def test_export_field(meshes, sphere):
    exported = MapService.export_field(MapService.from_spec(meshes[0], "identity", sphere))
    assert exported["manifold"] == "sphere2"
    assert len(exported["values"]) == 12
    assert exported["interpolated"] is False
