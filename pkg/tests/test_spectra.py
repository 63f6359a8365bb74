import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, seed, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from src.config import settings as lab_settings
from src.errors import AssemblyError, ConfigError, SpectrumError
from src.service.forms_service import FormsService, parse_two_form
from src.service.maps_service import MapService
from src.service.spectra_service import SpectraService


# ===== DIAGONAL EXAMPLES =====


def test_diagonal_generalized_problem():
    A = np.diag([-1.0, 0.0, 2.0])
    B = np.diag([4.0, 1.0, 1.0])
    report = SpectraService.solve(A, B, 3)
    assert_allclose(report.eigenvalues, [-0.25, 0.0, 2.0], atol=1e-14)
    classification = SpectraService.classify(report)
    assert (classification.index, classification.nullity) == (1, 1)
    assert report.classes() == ["negative", "null", "positive"]
    assert report.orthonormality_error < 1e-14


def test_diagonal_inertia_is_scale_free():
    A = np.diag([-3.0, -1.0, 0.0, 0.0, 5.0])
    result = SpectraService.inertia_invariance(A, np.eye(5), np.diag([1.0, 10.0, 0.1, 3.0, 2.0]))
    assert result["agree"]
    assert (result["first"]["index"], result["first"]["nullity"]) == (2, 2)


def test_eigenvector_signs_are_fixed():
    A = np.diag([1.0, 2.0])
    report = SpectraService.solve(A, np.eye(2), 2)
    first_nonzero = [col[np.flatnonzero(np.abs(col) > 1e-12)[0]] for col in report.eigenvectors.T]
    assert all(v > 0 for v in first_nonzero)


def test_sparse_input_and_table():
    A = sp.diags([-2.0, 1.0, 3.0, 4.0]).tocsr()
    report = SpectraService.solve(A, sp.identity(4, format="csr"), 2)
    SpectraService.classify(report)
    rows = report.table()
    assert [row["k"] for row in rows] == [0, 1]
    assert rows[0]["class"] == "negative"
    assert report.summary()["solver"] == "dense"


# ===== PLANTED INERTIA =====


@seed(1234)
@settings(deadline=None, max_examples=30)
@given(
    negative=st.integers(0, 4),
    null=st.integers(0, 3),
    positive=st.integers(1, 6),
    data_seed=st.integers(0, 2**31 - 1),
)
def test_planted_inertia_survives_change_of_scalar_product(negative, null, positive, data_seed):
    rng = np.random.default_rng(data_seed)
    n = negative + null + positive
    A = SpectraService.planted(negative, null, positive, rng)
    B1 = SpectraService.random_spd(n, rng)
    B2 = SpectraService.random_spd(n, rng)
    result = SpectraService.inertia_invariance(A, B1, B2)
    assert result["agree"]
    assert (result["first"]["index"], result["first"]["nullity"]) == (negative, null)


@settings(deadline=None, max_examples=20)
@given(n=st.integers(1, 12), data_seed=st.integers(0, 2**31 - 1))
def test_random_spd_is_positive_definite(n, data_seed):
    B = SpectraService.random_spd(n, np.random.default_rng(data_seed))
    assert_allclose(B, B.T, atol=1e-10)
    assert np.linalg.eigvalsh(B).min() > 0
    SpectraService.check_spd(B)


def test_scale_bounds_of_multiples():
    B = SpectraService.random_spd(4, np.random.default_rng(3))
    low, high = SpectraService.scale_bounds(3.0 * B, B)
    assert low == pytest.approx(3.0)
    assert high == pytest.approx(3.0)


def _sparse_planted(n=60):
    a = np.concatenate([[-0.5, -0.25, 0.0], 1.0 + np.arange(n - 3)])
    B1 = sp.diags(np.linspace(1.0, 3.0, n)).tocsr()
    return sp.diags(a).tocsr(), B1, sp.identity(n, format="csr")


def test_inertia_above_dense_limit_uses_lowest_pairs(monkeypatch):
    monkeypatch.setattr(lab_settings, "dense_dof_limit", 20)
    A, B1, B2 = _sparse_planted()
    result = SpectraService.inertia_invariance(A, B1, B2, tau=1e-6, k=6)
    assert result["solver"] == "shift-invert"
    assert result["agree"] is True
    assert (result["first"]["index"], result["first"]["nullity"]) == (2, 1)
    assert (result["second"]["index"], result["second"]["nullity"]) == (2, 1)
    assert result["scale_bounds"] == pytest.approx([1.0, 3.0], rel=1e-6)


def test_truncated_lowest_pairs_leave_inertia_undecided(monkeypatch):
    monkeypatch.setattr(lab_settings, "dense_dof_limit", 20)
    n = 60
    A = sp.diags(-np.linspace(0.5, 1.0, n)).tocsr()
    B1 = sp.diags(np.linspace(1.0, 3.0, n)).tocsr()
    result = SpectraService.inertia_invariance(A, B1, sp.identity(n, format="csr"), k=4)
    assert result["first"]["truncated"]
    assert result["agree"] is None


# ===== CLASSIFICATION =====


def test_classification_flags():
    report = SpectraService.solve(np.diag([-1.0, 1e-3, 1.0]), np.eye(3), 3)
    classification = SpectraService.classify(report, tau=1e-3)
    assert classification.ambiguous
    assert classification.sensitivity["tau/10"] == (1, 0)
    assert classification.sensitivity["10tau"] == (1, 1)
    assert not classification.stable

    report = SpectraService.solve(np.diag([-1.0, 0.0, 0.0]), np.eye(3), 2)
    assert SpectraService.classify(report).truncated


def test_default_tau():
    assert SpectraService.default_tau() == 1e-8
    assert SpectraService.default_tau(0.2) == pytest.approx(0.1)
    assert SpectraService.default_tau(1e-12) == 1e-8


# ===== ERRORS =====


def test_indefinite_scalar_product_is_rejected():
    with pytest.raises(SpectrumError) as info:
        SpectraService.solve(np.eye(2), np.diag([1.0, -2.0]), 1)
    assert info.value.smallest_eigenvalue == pytest.approx(-2.0)


@pytest.mark.parametrize("k,method", [(0, "auto"), (4, "auto"), (1, "lobpcg")])
def test_bad_solve_requests(k, method):
    with pytest.raises(ConfigError):
        SpectraService.solve(np.eye(3), np.eye(3), k, method)


def test_iterative_needs_room():
    with pytest.raises(ConfigError):
        SpectraService.solve(sp.identity(4, format="csr"), sp.identity(4, format="csr"), 3, "iterative")


# ===== ASSEMBLED FORMS =====


@pytest.fixture(scope="module")
def fine_identity(meshes, sphere):
    u = MapService.from_spec(meshes[3], "identity", sphere)
    return u, FormsService.assemble(u)


def test_identity_map_spectrum(fine_identity):
    u, forms = fine_identity
    report = SpectraService.solve(forms.index_form, forms.scalar_product, 12)
    classification = SpectraService.classify(report, SpectraService.default_tau(u.mesh.h))
    assert classification.index == 0
    assert classification.nullity == 6
    apriori = SpectraService.apriori_check(report, forms)
    assert apriori["min_lambda_plus_one"] >= -1e-8
    assert apriori["identity_residual"] < 1e-8
    assert report.w12_norms is not None


def test_iterative_agrees_with_dense(identity_forms):
    dense = SpectraService.solve(identity_forms.index_form, identity_forms.scalar_product, 8, "dense")
    iterative = SpectraService.solve(identity_forms.index_form, identity_forms.scalar_product, 8, "iterative")
    assert iterative.solver == "shift-invert"
    assert_allclose(iterative.eigenvalues, dense.eigenvalues, atol=1e-8)


def test_apriori_check_rejects_general_forms(identity_map):
    general = FormsService.assemble_general(identity_map, parse_two_form("zero"))
    report = SpectraService.solve(general.index_form, general.scalar_product, 4)
    with pytest.raises(ConfigError):
        SpectraService.apriori_check(report, general)


def test_apriori_check_detects_inconsistent_forms(identity_forms):
    report = SpectraService.solve(identity_forms.index_form, identity_forms.mass, 4)
    with pytest.raises(AssemblyError):
        SpectraService.apriori_check(report, identity_forms)


@pytest.mark.slow
def test_inertia_against_plain_mass(fine_identity):
    u, forms = fine_identity
    result = SpectraService.inertia_invariance(
        forms.index_form, forms.scalar_product, forms.mass, SpectraService.default_tau(u.mesh.h)
    )
    assert result["agree"]
    assert (result["first"]["index"], result["first"]["nullity"]) == (0, 6)
    assert result["scale_bounds"][0] >= 1.0 - 1e-10
