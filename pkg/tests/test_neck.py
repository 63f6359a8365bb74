import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import ResolutionError
from src.geometry.mesh import cylinder
from src.schemas import NeckTestConfig
from src.service.maps_service import CylinderField, MapService, NeckChart
from src.service.neck_service import GRADIENT_RATE, LINFTY_LIMIT, TANGENTIAL_RATE, NeckService


def _phi_star(t, theta):
    return np.sin(t) * np.cos(theta) + t**2


def _laplacian_phi_star(t, theta):
    return -2.0 * np.sin(t) * np.cos(theta) + 2.0


def _harmonic_mode(grid):
    T, TH = grid.mesh_grid
    return np.cosh(T) / np.cosh(grid.half_length) * np.cos(TH)


def _peaked_in_the_middle(grid, amplitude=0.1):
    def sample(t, theta):
        alpha = amplitude / np.cosh(t / 2.0)
        return np.stack([np.cos(theta) * np.sin(alpha), np.sin(theta) * np.sin(alpha), np.cos(alpha)], axis=-1)

    return CylinderField.from_function(grid, sample, "peaked")


# ===== POISSON =====


def test_manufactured_solution_converges_at_second_order():
    runs = [NeckService.manufactured_solution(cylinder(2.0, n, 16), _phi_star, _laplacian_phi_star) for n in (33, 65, 129)]
    order = NeckService.convergence_order([r["error"] for r in runs], [r["dt"] for r in runs])
    assert order >= 1.8
    assert runs[-1]["error"] < 1e-3


def test_discrete_source_is_recovered_exactly():
    result = NeckService.manufactured_solution(cylinder(2.0, 41, 16), _phi_star)
    assert result["error"] < 1e-9
    assert result["residual"] < 1e-8


def test_poisson_solve_keeps_boundary_values():
    grid = cylinder(1.0, 33, 16)
    _, TH = grid.mesh_grid
    phi = NeckService.poisson_solve(grid, np.zeros((33, 16)), np.cos(TH[0]), 2.0)
    assert_allclose(phi[0], np.cos(grid.theta), atol=1e-14)
    assert_allclose(phi[-1], 2.0, atol=1e-14)
    # harmonic with mean boundary values 0 and 2: the θ-mean is linear in t
    assert_allclose(phi.mean(axis=1), 1.0 + grid.t, atol=1e-12)


def test_poisson_rejects_mismatched_source():
    with pytest.raises(ResolutionError):
        NeckService.poisson_solve(cylinder(1.0, 33, 16), np.zeros((32, 16)))


def test_convergence_order_of_exact_powers():
    assert NeckService.convergence_order([4.0, 1.0, 0.25], [0.2, 0.1, 0.05]) == pytest.approx(2.0)


# ===== TANGENTIAL ESTIMATE AND L∞ BOUND =====


def test_harmonic_mode_decays_into_the_neck():
    grid = NeckService.grid_for(6.0)
    result = NeckService.tangential_estimate_check(grid, _harmonic_mode(grid))
    assert result["passed"]
    assert result["decay_exponent"] == pytest.approx(2.0, abs=0.1)
    assert result["decay_exponent"] >= TANGENTIAL_RATE
    assert result["admissible_constant"] is not None


def test_forced_problem_has_finite_constant():
    grid = NeckService.grid_for(4.0)
    T, TH = grid.mesh_grid
    f = np.exp(-(T**2)) * (1.0 + np.cos(TH))
    phi = NeckService.poisson_solve(grid, f, np.cos(grid.theta), np.cos(grid.theta))
    tangential = NeckService.tangential_estimate_check(grid, phi, f)
    linfty = NeckService.linfty_check(grid, phi, f)
    assert tangential["admissible_constant"] is not None
    assert linfty["passed"]
    assert linfty["source_term"] > 0


def test_linfty_bound_for_mean_free_boundary():
    grid = NeckService.grid_for(5.0)
    result = NeckService.linfty_check(grid, _harmonic_mode(grid))
    assert result["boundary_mean"] == pytest.approx(0.0, abs=1e-14)
    assert result["source_term"] == 0.0
    assert result["passed"]


def test_tangential_constants_stay_bounded_along_the_default_sweep():
    forced, harmonic = [], []
    for L in NeckTestConfig().lengths:
        grid = NeckService.grid_for(L, dt=0.1)
        f = NeckService.end_sources(grid)
        phi = NeckService.poisson_solve(grid, f, np.cos(grid.theta), np.cos(grid.theta))
        forced.append(NeckService.tangential_estimate_check(grid, phi, f)["admissible_constant"])
        harmonic.append(NeckService.tangential_estimate_check(grid, _harmonic_mode(grid))["admissible_constant"])
    limit = NeckTestConfig().growth_limit
    assert all(c is not None and c > 0 for c in forced)
    assert NeckService.growth(forced) <= limit
    assert NeckService.growth(harmonic) <= limit


def test_end_sources_are_mean_free_and_track_the_ends():
    grid = NeckService.grid_for(8.0)
    f = NeckService.end_sources(grid)
    assert_allclose(f.mean(axis=1), 0.0, atol=1e-12)
    peak = grid.t[np.argmax(f[:, 0])]
    assert abs(abs(peak) - 5.0) <= grid.dt


def test_linfty_constant_is_exercised_by_boundary_data():
    constants = []
    for L in (4.0, 8.0):
        grid = NeckService.grid_for(L)
        boundary = 1.0 + np.cos(grid.theta)
        phi = NeckService.poisson_solve(grid, np.zeros((grid.n_t, grid.n_theta)), boundary, boundary)
        result = NeckService.linfty_check(grid, phi)
        assert result["boundary_mean"] == pytest.approx(1.0)
        assert result["source_term"] == 0.0
        assert result["passed"]
        constants.append(result["admissible_constant"])
    assert all(0.1 < c < 0.2 for c in constants)
    assert max(constants) <= LINFTY_LIMIT
    assert NeckService.growth(constants) <= NeckTestConfig().growth_limit


def test_linfty_check_fails_above_its_limit():
    grid = NeckService.grid_for(5.0)
    result = NeckService.linfty_check(grid, _harmonic_mode(grid), limit=0.01)
    assert result["admissible_constant"] > 0.01
    assert not result["passed"]


@pytest.mark.parametrize("half_length", [0.5, 0.8])
def test_estimates_reject_necks_without_interior_slices(half_length):
    grid = cylinder(half_length, 33, 16)
    with pytest.raises(ResolutionError):
        NeckService.tangential_estimate_check(grid, _harmonic_mode(grid))
    with pytest.raises(ResolutionError):
        NeckService.linfty_check(grid, _harmonic_mode(grid))


def test_decay_profile_of_scalar_field():
    grid = NeckService.grid_for(4.0)
    profile = NeckService.decay_profile(_harmonic_mode(grid), grid)
    frame = profile.to_frame()
    assert list(frame.columns) == ["t0", "e_t0", "sup_grad2", "bound_rhs"]
    assert np.all(np.abs(profile.t0) <= 3.0 + 1e-12)
    with pytest.raises(ResolutionError):
        NeckService.decay_profile(_harmonic_mode(grid))


# ===== NO-NECK PROPERTY =====


@pytest.mark.parametrize("kind", ["one_sided_bubble", "two_sided_bubble"])
def test_bubble_necks_have_no_energy(kind):
    L = 4.0
    family, chart = getattr(NeckService, kind)(L)
    grid = NeckService.grid_for(L)
    v = NeckService.neck_field(family, chart, grid)
    result = NeckService.no_neck_decay_check(v)
    assert result["applicable"]
    assert result["window_energy"] < 0.5
    assert result["passed"]
    assert result["decay_exponent"] >= GRADIENT_RATE
    assert NeckService.slice_balance_check(v)["passed"]


def test_two_sided_bubble_reaches_delta_at_both_ends():
    L = 3.0
    family, chart = NeckService.two_sided_bubble(L, delta=0.1)
    assert family.degree == 2
    grid = NeckService.grid_for(L)
    v = NeckService.neck_field(family, chart, grid)
    south = np.array([0.0, 0.0, -1.0])
    # distance to the south pole ≈ 2|w| for small |w|
    ends = np.linalg.norm(v.values[[0, -1]] - south, axis=-1)
    assert_allclose(ends, 0.2, rtol=0.05)


def test_oscillation_shrinks_with_neck_length():
    oscillations = []
    for L in (2.0, 4.0, 6.0):
        family, chart = NeckService.one_sided_bubble(L)
        v = NeckService.neck_field(family, chart, NeckService.grid_for(L))
        oscillations.append(NeckService.no_neck_decay_check(v)["oscillation"])
    assert oscillations[0] > oscillations[1] > oscillations[2]


def test_full_bubble_on_neck_is_not_small():
    grid = NeckService.grid_for(3.0)
    v = MapService.neck_pullback(MapService.parse_family("identity"), grid, NeckChart(0.0, 1.0))
    result = NeckService.no_neck_decay_check(v)
    assert not result["applicable"]
    assert not result["passed"]


@pytest.mark.parametrize("half_length", [1.5, 2.0])
def test_short_neck_leaves_decay_undecided(half_length):
    family, chart = NeckService.one_sided_bubble(half_length)
    grid = NeckService.grid_for(half_length)
    result = NeckService.no_neck_decay_check(NeckService.neck_field(family, chart, grid))
    assert result["passed"] is None
    assert result["admissible_constant"] is None
    assert "no slice" in result["reason"]
    assert np.isfinite(result["oscillation"])
    assert np.isfinite(result["window_energy"])
    assert len(result["profile"].t0) == grid.n_t


def test_gradient_growing_toward_the_middle_fails():
    result = NeckService.no_neck_decay_check(_peaked_in_the_middle(NeckService.grid_for(6.0)))
    assert result["applicable"]
    assert result["left_slope"] < 0
    assert result["right_slope"] < 0
    assert result["decay_exponent"] < 0
    assert result["passed"] is False
    assert result["reason"] is None


def test_constant_field_passes_trivially():
    result = NeckService.no_neck_decay_check(NeckService.constant_field(NeckService.grid_for(3.0)))
    assert result["passed"]
    assert result["decay_exponent"] is None
    assert result["admissible_constant"] == 0.0


def test_non_conformal_field_is_unbalanced():
    check = NeckService.slice_balance_check(NeckService.non_conformal_field(NeckService.grid_for(3.0)))
    assert not check["passed"]
    assert check["hopf_max"] > 0


def test_growth_of_constants():
    assert NeckService.growth([2.0, 3.0, 4.0]) == pytest.approx(2.0)
    assert NeckService.growth([0.0, 0.0]) == 1.0
    assert NeckService.growth([None, 1.0]) is None
