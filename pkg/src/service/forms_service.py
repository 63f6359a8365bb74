"""
Index form, scalar products and the general conformally invariant form,
assembled over per-vertex tangent-frame coordinates
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp

from src.config import settings
from src.errors import AssemblyError, ConfigError, GeometryError, ResourceLimitError
from src.service.maps_service import MapField

logger = logging.getLogger(__name__)

FD_STEP = 1e-3
CURVATURE_RULES = ("weak", "quadrature")


@dataclass(frozen=True, eq=False)
class TangentFrameBasis:
    """Orthonormal frames of T_{u(v)}N, shape (V, n, m); dof index is v·n + a"""

    frames: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.frames.shape[0]

    @property
    def fiber_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def dof(self) -> int:
        return self.n_vertices * self.fiber_dim

    def to_ambient(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float).reshape(self.n_vertices, self.fiber_dim)
        return np.einsum("va,vam->vm", coeffs, self.frames)

    def from_ambient(self, vectors: np.ndarray) -> np.ndarray:
        """Frame coefficients of the tangential part of per-vertex vectors"""
        return np.einsum("vam,vm->va", self.frames, np.asarray(vectors, dtype=float)).ravel()


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """Stiffness K, mass M₀ and curvature C in frame coordinates"""

    u: MapField
    basis: TangentFrameBasis
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    curvature: sp.csr_matrix
    rule: str = "weak"
    extra: Optional[sp.csr_matrix] = None

    @cached_property
    def index_form(self) -> sp.csr_matrix:
        """A_form = K − C (+ deviation of a general functional)"""
        form = (self.stiffness - self.curvature).tocsr()
        if self.extra is not None:
            form = (form + self.extra).tocsr()
        return form

    @cached_property
    def scalar_product(self) -> sp.csr_matrix:
        """B_form = M₀ + C"""
        return (self.mass + self.curvature).tocsr()

    @property
    def dof(self) -> int:
        return self.basis.dof

    def matrix(self, which: str) -> sp.csr_matrix:
        table = {
            "index": self.index_form,
            "scalar": self.scalar_product,
            "curvature": self.curvature,
            "stiffness": self.stiffness,
            "mass": self.mass,
        }
        if which not in table:
            raise ConfigError(f"unknown form '{which}'", {"known": sorted(table)})
        return table[which]


# ===== TWO-FORMS FOR THE GENERAL FUNCTIONAL =====


@dataclass(frozen=True)
class TwoForm:
    """ϖ = ½ W_ab(y) dy^a ∧ dy^b with antisymmetric W"""

    kind: str
    strength: float = 0.0

    def coefficients(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        W = np.zeros(y.shape + (y.shape[-1],))
        if self.kind == "calibration":
            # H y¹ dy² ∧ dy³
            W[..., 1, 2] = self.strength * y[..., 0]
            W[..., 2, 1] = -self.strength * y[..., 0]
        return W

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.strength == 0.0


def parse_two_form(spec: str) -> TwoForm:
    kind, _, value = spec.strip().partition(":")
    if kind == "zero" and not value:
        return TwoForm("zero")
    if kind == "calibration":
        try:
            return TwoForm("calibration", float(value) if value else 1.0)
        except ValueError:
            raise ConfigError(f"invalid two-form strength in '{spec}'")
    raise ConfigError(f"unknown two-form '{spec}'")


def dirichlet_functional(u: MapField) -> Callable[[np.ndarray], float]:
    K = u.mesh.stiffness

    def energy(values: np.ndarray) -> float:
        return 0.5 * float(np.sum(values * (K @ values)))

    return energy


class FormsService:
    """Assembly of the bilinear forms along a map"""

    @staticmethod
    def build_frames(u: MapField) -> TangentFrameBasis:
        """Deterministic tangent frames at every vertex value"""
        return TangentFrameBasis(u.manifold.tangent_frame(u.values))

    # ===== ASSEMBLY =====

    @staticmethod
    def _frame_block(scalar: sp.spmatrix, basis: TangentFrameBasis) -> sp.csr_matrix:
        """Fᵀ(S ⊗ I_m)F for a scalar P1 matrix S"""
        coo = scalar.tocoo()
        n = basis.fiber_dim
        f = basis.frames
        overlap = np.einsum("eam,ebm->eab", f[coo.row], f[coo.col])
        data = coo.data[:, None, None] * overlap
        a = np.arange(n)
        shape = data.shape
        rows = np.broadcast_to(coo.row[:, None, None] * n + a[None, :, None], shape)
        cols = np.broadcast_to(coo.col[:, None, None] * n + a[None, None, :], shape)
        return sp.coo_matrix(
            (data.ravel(), (rows.ravel(), cols.ravel())), shape=(basis.dof, basis.dof)
        ).tocsr()

    @staticmethod
    def _curvature_vectors(u: MapField, basis: TangentFrameBasis, rule: str) -> np.ndarray:
        """Per-vertex lumped curvature matrices C_v, shape (V, n, n)"""
        manifold = u.manifold
        frames = basis.frames
        V, n, m = frames.shape
        if rule == "weak":
            H = -(u.mesh.stiffness @ u.values)
            pv = np.broadcast_to(u.values[:, None, :], frames.shape)
            pairs = manifold._sff(pv[:, :, None, :], frames[:, :, None, :], frames[:, None, :, :])
            return np.einsum("vm,vabm->vab", H, pairs)
        if rule == "quadrature":
            mesh = u.mesh
            grad = np.swapaxes(u.gradient(), 1, 2)  # (F, 3, m)
            C = np.zeros((V, n, n))
            for corner in range(3):
                vertex = mesh.triangles[:, corner]
                p = u.values[vertex]
                P = manifold._projection(p)
                g = np.einsum("fij,fkj->fki", P, grad)
                weight = mesh.areas / 3.0
                for a in range(n):
                    image = manifold.curvature_term(p, g, frames[vertex, a], check=False)
                    local = np.einsum("fm,fbm->fb", image, frames[vertex]) * weight[:, None]
                    for b in range(n):
                        C[:, a, b] += np.bincount(vertex, weights=local[:, b], minlength=V)
            return C
        raise ConfigError(f"unknown curvature rule '{rule}'", {"known": list(CURVATURE_RULES)})

    @staticmethod
    def _block_diagonal(blocks: np.ndarray) -> sp.csr_matrix:
        V, n, _ = blocks.shape
        return sp.bsr_matrix((blocks, np.arange(V), np.arange(V + 1)), shape=(V * n, V * n)).tocsr()

    @staticmethod
    def assemble(u: MapField, rule: str = "weak", basis: Optional[TangentFrameBasis] = None) -> AssembledForms:
        """K, M₀ and C for the map u"""
        basis = basis or FormsService.build_frames(u)
        K = FormsService._frame_block(u.mesh.stiffness, basis)
        M0 = FormsService._frame_block(u.mesh.mass, basis)
        blocks = FormsService._curvature_vectors(u, basis, rule)
        blocks = 0.5 * (blocks + np.swapaxes(blocks, 1, 2))
        C = FormsService._block_diagonal(blocks)
        for name, matrix in (("stiffness", K), ("mass", M0), ("curvature", C)):
            if not np.all(np.isfinite(matrix.data)):
                logger.error(f"Non-finite entries in {name} matrix for {u.provenance}")
                raise AssemblyError(f"non-finite entries in {name} matrix", {"map": u.provenance})
        logger.info(f"Assembled forms for {u.provenance}: dof={basis.dof}, rule={rule}")
        return AssembledForms(u, basis, K, M0, C, rule)

    # ===== EVALUATION =====

    @staticmethod
    def cross_form(forms: AssembledForms, x: np.ndarray, y: np.ndarray, which: str = "index") -> float:
        """xᵀ Form y"""
        return float(np.asarray(x) @ (forms.matrix(which) @ np.asarray(y)))

    @staticmethod
    def curvature_energy(forms: AssembledForms, x: np.ndarray) -> float:
        """∫⟨A²_u(X), X⟩ for the section with frame coefficients x"""
        return FormsService.cross_form(forms, x, x, "curvature")

    @staticmethod
    def triangle_contributions(forms: AssembledForms, x: np.ndarray) -> Dict[str, np.ndarray]:
        """
        Per-triangle shares of xᵀKx, xᵀM₀x and xᵀCx; each sums to the full form

        The lumped curvature of a vertex is split by its triangles' area fractions.
        """
        mesh = forms.u.mesh
        X = forms.basis.to_ambient(x)
        grad = mesh.gradient(X)
        stiffness = mesh.areas * np.sum(grad**2, axis=(1, 2))
        corners = X[mesh.triangles]
        mass = mesh.areas / 12.0 * (
            np.sum(corners**2, axis=(1, 2)) + np.sum(corners.sum(axis=1) ** 2, axis=1)
        )
        xv = np.asarray(x, dtype=float).reshape(forms.basis.n_vertices, -1)
        per_vertex = xv * (forms.curvature @ np.asarray(x, dtype=float)).reshape(xv.shape)
        per_vertex = per_vertex.sum(axis=1) / mesh.lumped_mass
        curvature = (mesh.areas / 3.0) * per_vertex[mesh.triangles].sum(axis=1)
        return {"stiffness": stiffness, "mass": mass, "curvature": curvature}

    # ===== FINITE-DIFFERENCE ORACLE =====

    @staticmethod
    def fd_second_variation(
        functional: Callable[[np.ndarray], float],
        u: MapField,
        X: np.ndarray,
        step: float = FD_STEP,
    ) -> Dict[str, float]:
        """
        Second derivative of t ↦ functional(π(u + tX)) at 0 by central
        differences at step and step/2, Richardson-extrapolated
        """
        X = np.asarray(X, dtype=float)
        largest = float(np.max(np.linalg.norm(X, axis=1))) if X.size else 0.0
        if largest == 0.0:
            return {"value": 0.0, "coarse": 0.0, "fine": 0.0, "richardson_gap": 0.0}
        if step * largest >= u.manifold.reach:
            raise GeometryError(
                f"retraction step {step * largest:.3e} leaves the tubular neighborhood of {u.manifold.name}",
                {"reach": u.manifold.reach},
            )
        retract = u.manifold.closest_point
        center = functional(u.values)

        def second_difference(h: float) -> float:
            plus = functional(retract(u.values + h * X))
            minus = functional(retract(u.values - h * X))
            return (plus - 2.0 * center + minus) / h**2

        coarse = second_difference(step)
        fine = second_difference(0.5 * step)
        value = (4.0 * fine - coarse) / 3.0
        return {
            "value": value,
            "coarse": coarse,
            "fine": fine,
            "richardson_gap": abs(fine - coarse),
        }

    # ===== GENERAL FUNCTIONAL E(u) + ∫u*ϖ =====

    @staticmethod
    def _pullback_density(mesh, corner_values: np.ndarray, form: TwoForm) -> np.ndarray:
        """Per-triangle ∫_T u*ϖ ≈ ⟨∂_1u, W(ū)∂_2u⟩|T| in an oriented frame of T"""
        grad = np.einsum("fim,fia->fma", corner_values, mesh.basis_gradients)
        e1 = mesh.corners[:, 1] - mesh.corners[:, 0]
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(mesh.normals, e1)
        d1 = np.einsum("fma,fa->fm", grad, e1)
        d2 = np.einsum("fma,fa->fm", grad, e2)
        W = form.coefficients(corner_values.mean(axis=1))
        return np.einsum("fm,fmk,fk->f", d1, W, d2) * mesh.areas

    @staticmethod
    def pullback_integral(u: MapField, form: TwoForm) -> float:
        return float(np.sum(FormsService._pullback_density(u.mesh, u.values[u.mesh.triangles], form)))

    @staticmethod
    def assemble_general(
        u: MapField,
        form: TwoForm,
        rule: str = "weak",
        step: float = FD_STEP,
    ) -> AssembledForms:
        """
        Index form of E(u) + ∫u*ϖ: the Dirichlet forms plus the Hessian of the
        pullback term along the nearest-point retraction, obtained per triangle
        by polarized central differences over local frame-basis pairs
        """
        if u.mesh.n_vertices > settings.max_general_vertices:
            raise ResourceLimitError(
                f"general form polarization limited to {settings.max_general_vertices} vertices, "
                f"mesh has {u.mesh.n_vertices}",
                {"vertices": u.mesh.n_vertices},
            )
        forms = FormsService.assemble(u, rule)
        if form.is_zero:
            return AssembledForms(u, forms.basis, forms.stiffness, forms.mass, forms.curvature, rule,
                                  sp.csr_matrix((forms.dof, forms.dof)))
        local = FormsService.local_pullback_hessians(u, forms.basis, form, step)
        mesh = u.mesh
        n = forms.basis.fiber_dim
        dofs = (mesh.triangles[:, :, None] * n + np.arange(n)[None, None, :]).reshape(mesh.n_triangles, -1)
        k = dofs.shape[1]
        rows = np.repeat(dofs, k, axis=1).ravel()
        cols = np.tile(dofs, (1, k)).ravel()
        extra = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(forms.dof, forms.dof)).tocsr()
        extra = (0.5 * (extra + extra.T)).tocsr()
        logger.info(f"Assembled general form ({form.kind}, {form.strength:g}) for {u.provenance}")
        return AssembledForms(u, forms.basis, forms.stiffness, forms.mass, forms.curvature, rule, extra)

    @staticmethod
    def local_pullback_hessians(
        u: MapField,
        basis: TangentFrameBasis,
        form: TwoForm,
        step: float = FD_STEP,
    ) -> np.ndarray:
        """Per-triangle Hessians of ∫_T u*ϖ in local frame coordinates, shape (F, 3n, 3n)"""
        mesh = u.mesh
        n = basis.fiber_dim
        base = u.values[mesh.triangles]  # (F, 3, m)
        directions = basis.frames[mesh.triangles]  # (F, 3, n, m)
        retract = u.manifold.closest_point
        size = 3 * n

        def perturbed(weights: np.ndarray, h: float) -> np.ndarray:
            shift = np.einsum("ia,fiam->fim", weights.reshape(3, n), directions)
            return FormsService._pullback_density(mesh, retract(base + h * shift), form)

        def hessian(h: float) -> np.ndarray:
            center = FormsService._pullback_density(mesh, base, form)
            eye = np.eye(size)
            out = np.empty((mesh.n_triangles, size, size))
            for i in range(size):
                out[:, i, i] = (perturbed(eye[i], h) - 2.0 * center + perturbed(-eye[i], h)) / h**2
                for j in range(i + 1, size):
                    mixed = (
                        perturbed(eye[i] + eye[j], h)
                        - perturbed(eye[i] - eye[j], h)
                        - perturbed(-eye[i] + eye[j], h)
                        + perturbed(-eye[i] - eye[j], h)
                    ) / (4.0 * h**2)
                    out[:, i, j] = out[:, j, i] = mixed
            return out

        coarse = hessian(step)
        fine = hessian(0.5 * step)
        return (4.0 * fine - coarse) / 3.0

    @staticmethod
    def growth_report(forms: AssembledForms, x: np.ndarray) -> Dict[str, float]:
        """
        Deviation xᵀDx of the general form from the Dirichlet form against
        Σ_T (|∇u||X||∇X| + |∇u|²|X|²)|T| for one section
        """
        if forms.extra is None:
            raise ConfigError("growth report needs a general form")
        mesh = forms.u.mesh
        x = np.asarray(x, dtype=float)
        X = forms.basis.to_ambient(x)
        grad_u = np.sqrt(np.sum(forms.u.gradient() ** 2, axis=(1, 2)))
        grad_x = np.sqrt(np.sum(mesh.gradient(X) ** 2, axis=(1, 2)))
        size_x = np.sqrt(np.mean(np.sum(X[mesh.triangles] ** 2, axis=2), axis=1))
        deviation = abs(float(x @ (forms.extra @ x)))
        bound = float(np.sum((grad_u * size_x * grad_x + grad_u**2 * size_x**2) * mesh.areas))
        return {
            "deviation": deviation,
            "bound": bound,
            "growth_constant": deviation / bound if bound > 1e-14 else 0.0,
        }
