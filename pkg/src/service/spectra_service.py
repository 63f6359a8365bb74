"""
Generalized symmetric eigenproblems A x = λ B x: index, nullity, a priori
bounds and inertia checks
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.config import settings
from src.errors import AssemblyError, ConfigError, ResourceLimitError, SpectrumError
from src.service.forms_service import AssembledForms

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, sp.spmatrix]

ALGEBRAIC_TAU = 1e-8
SHIFT = -1.5
AMBIGUITY_BAND = 1e-3


@dataclass
class Classification:
    index: int
    nullity: int
    tau: float
    ambiguous: bool = False
    truncated: bool = False
    sensitivity: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return all(v == (self.index, self.nullity) for v in self.sensitivity.values())

    def as_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "nullity": self.nullity,
            "tau": self.tau,
            "ambiguous": self.ambiguous,
            "truncated": self.truncated,
            "stable": self.stable,
            "sensitivity": {k: list(v) for k, v in self.sensitivity.items()},
        }


@dataclass
class SpectrumReport:
    """Lowest eigenpairs with per-pair diagnostics; eigenvectors are B-orthonormal columns"""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    normalization: np.ndarray
    solver: str
    dof: int
    orthonormality_error: float = 0.0
    classification: Optional[Classification] = None
    w12_norms: Optional[np.ndarray] = None
    apriori: Dict[str, Any] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def classes(self) -> List[str]:
        if self.classification is None:
            return ["" for _ in self.eigenvalues]
        tau = self.classification.tau
        return ["negative" if lam < -tau else "null" if abs(lam) <= tau else "positive" for lam in self.eigenvalues]

    def table(self) -> List[Dict[str, Any]]:
        """Rows (k, λ, residual, normalization, w12_norm, class)"""
        w12 = self.w12_norms if self.w12_norms is not None else np.full(self.k, np.nan)
        return [
            {
                "k": i,
                "lambda": float(lam),
                "residual": float(res),
                "normalization": float(nrm),
                "w12_norm": float(w),
                "class": cls,
            }
            for i, (lam, res, nrm, w, cls) in enumerate(
                zip(self.eigenvalues, self.residuals, self.normalization, w12, self.classes())
            )
        ]

    def summary(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "solver": self.solver,
            "dof": self.dof,
            "k": self.k,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "max_residual": float(self.residuals.max()) if self.k else 0.0,
            "orthonormality_error": self.orthonormality_error,
        }
        if self.classification is not None:
            out["classification"] = self.classification.as_dict()
        if self.apriori:
            out["apriori"] = self.apriori
        return out


def _dense(matrix: Matrix) -> np.ndarray:
    return matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)


def _norm(matrix: Matrix) -> float:
    return float(spla.norm(matrix, np.inf)) if sp.issparse(matrix) else float(np.linalg.norm(matrix, np.inf))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """First entry above round-off in each column made positive"""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if len(big) and col[big[0]] < 0:
            out[:, j] = -col
    return out


class SpectraService:
    """Eigen-solves and spectral classification"""

    @staticmethod
    def smallest_eigenvalue(B: Matrix) -> float:
        if sp.issparse(B) and B.shape[0] > settings.dense_dof_limit:
            return float(spla.eigsh(B, k=1, which="SA", return_eigenvectors=False, tol=1e-8)[0])
        return float(la.eigvalsh(_dense(B), subset_by_index=[0, 0])[0])

    @staticmethod
    def check_spd(B: Matrix) -> None:
        """Raise SpectrumError carrying the smallest eigenvalue if B is not SPD"""
        if sp.issparse(B) and B.shape[0] > settings.dense_dof_limit:
            smallest = SpectraService.smallest_eigenvalue(B)
            if smallest > 0:
                return
        else:
            try:
                la.cholesky(_dense(B), lower=True)
                return
            except la.LinAlgError:
                smallest = SpectraService.smallest_eigenvalue(B)
        logger.error(f"Scalar product not positive definite (smallest eigenvalue {smallest:.3e})")
        raise SpectrumError(
            f"B_form not positive definite: smallest eigenvalue {smallest:.3e}; "
            "augment the embedding of the target",
            smallest_eigenvalue=smallest,
        )

    @staticmethod
    def solve(A: Matrix, B: Matrix, k: int, method: str = "auto") -> SpectrumReport:
        """Lowest k eigenpairs of A x = λ B x"""
        dof = A.shape[0]
        if A.shape != (dof, dof) or B.shape != (dof, dof):
            raise ConfigError(f"shape mismatch: A {A.shape}, B {B.shape}")
        if not 1 <= k <= dof:
            raise ConfigError(f"requested {k} eigenpairs of a {dof}-dimensional problem")
        if method not in ("auto", "dense", "iterative"):
            raise ConfigError(f"unknown eigensolver method '{method}'")
        SpectraService.check_spd(B)
        use_dense = method == "dense" or (method == "auto" and dof <= settings.dense_dof_limit)
        if use_dense:
            values, vectors = la.eigh(_dense(A), _dense(B), subset_by_index=[0, k - 1])
            solver = "dense"
        else:
            if not settings.iterative_enabled:
                raise ResourceLimitError(
                    f"{dof} dof exceed the dense limit {settings.dense_dof_limit} and the iterative path is disabled"
                )
            if k >= dof - 1:
                raise ConfigError(f"iterative path needs k < dof − 1, got k={k}, dof={dof}")
            try:
                values, vectors = spla.eigsh(
                    sp.csc_matrix(A), k=k, M=sp.csc_matrix(B), sigma=SHIFT, which="LM", tol=1e-12
                )
            except spla.ArpackNoConvergence as e:
                logger.error(f"Shift-invert Lanczos did not converge for {dof} dof")
                raise SpectrumError("iterative eigensolver did not converge", detail={"dof": dof}) from e
            order = np.argsort(values)
            values, vectors = values[order], vectors[:, order]
            solver = "shift-invert"
        vectors = _fix_signs(vectors)
        Av, Bv = A @ vectors, B @ vectors
        residuals = np.linalg.norm(Av - Bv * values[None, :], axis=0) / max(_norm(B), 1e-300)
        gram = vectors.T @ Bv
        normalization = np.diag(gram).copy()
        orthonormality = float(np.max(np.abs(gram - np.eye(len(values)))))
        logger.info(
            f"Eigensolve ({solver}) finished: dof={dof}, k={k}, λ_min={values[0]:.6g}, "
            f"max residual={residuals.max():.2e}"
        )
        return SpectrumReport(values, vectors, residuals, normalization, solver, dof, orthonormality)

    @staticmethod
    def default_tau(mesh_size: Optional[float] = None) -> float:
        """max(1e−8, c_h·h) for PDE spectra, 1e−8 for algebraic problems"""
        if mesh_size is None:
            return ALGEBRAIC_TAU
        return max(ALGEBRAIC_TAU, settings.tau_mesh_factor * mesh_size)

    @staticmethod
    def count(eigenvalues: np.ndarray, tau: float) -> Tuple[int, int]:
        return int(np.sum(eigenvalues < -tau)), int(np.sum(np.abs(eigenvalues) <= tau))

    @staticmethod
    def classify(report: SpectrumReport, tau: Optional[float] = None) -> Classification:
        """(index, nullity) at τ, with sensitivity at τ/10 and 10τ"""
        tau = ALGEBRAIC_TAU if tau is None else tau
        values = report.eigenvalues
        index, nullity = SpectraService.count(values, tau)
        ambiguous = bool(np.any(np.abs(np.abs(values) - tau) <= AMBIGUITY_BAND * tau))
        truncated = bool(values[-1] <= tau)
        sensitivity = {
            "tau/10": SpectraService.count(values, tau / 10.0),
            "10tau": SpectraService.count(values, tau * 10.0),
        }
        if ambiguous:
            logger.warning(f"Eigenvalue within {AMBIGUITY_BAND:g}·τ of the threshold τ={tau:.3e}")
        if truncated:
            logger.warning(f"All {report.k} computed eigenvalues are ≤ τ; nullity may exceed k")
        classification = Classification(index, nullity, tau, ambiguous, truncated, sensitivity)
        report.classification = classification
        return classification

    @staticmethod
    def apriori_check(report: SpectrumReport, forms: AssembledForms, tolerance: float = 1e-6) -> Dict[str, Any]:
        """
        λ ≥ −1 and xᵀ(K+M₀)x ≤ 1+|λ| for B-normalized pairs, via the exact
        identity xᵀ(K+M₀)x = (1+λ)xᵀB_form x
        """
        if forms.extra is not None:
            raise ConfigError("a priori bounds apply to the Dirichlet index form only")
        X = report.eigenvectors
        w12 = np.einsum("ik,ik->k", X, (forms.stiffness + forms.mass) @ X)
        predicted = (1.0 + report.eigenvalues) * report.normalization
        scale = np.maximum(1.0, np.abs(w12))
        identity_residual = float(np.max(np.abs(w12 - predicted) / scale))
        lower_margin = float(np.min(report.eigenvalues + 1.0))
        w12_excess = float(np.max(w12 / report.normalization - (1.0 + np.abs(report.eigenvalues))))
        report.w12_norms = w12
        result = {
            "identity_residual": identity_residual,
            "min_lambda_plus_one": lower_margin,
            "max_w12_excess": w12_excess,
            "passed": bool(lower_margin >= -1e-8 and w12_excess <= 1e-8 and identity_residual <= 1e-8),
        }
        report.apriori = result
        if identity_residual > tolerance:
            logger.error(f"A priori identity violated by {identity_residual:.3e}")
            raise AssemblyError(
                "xᵀ(K+M₀)x ≠ (1+λ)xᵀBx beyond tolerance: forms are inconsistent",
                {"identity_residual": identity_residual},
            )
        return result

    @staticmethod
    def scale_bounds(B1: Matrix, B2: Matrix) -> Tuple[float, float]:
        """Extreme values of xᵀB₁x / xᵀB₂x"""
        if sp.issparse(B1) and B1.shape[0] > settings.dense_dof_limit:
            B1, B2 = sp.csc_matrix(B1), sp.csc_matrix(B2)
            low = spla.eigsh(B1, k=1, M=B2, which="SA", return_eigenvectors=False, tol=1e-8)[0]
            high = spla.eigsh(B1, k=1, M=B2, which="LA", return_eigenvectors=False, tol=1e-8)[0]
            return float(low), float(high)
        values = la.eigh(_dense(B1), _dense(B2), eigvals_only=True)
        return float(values[0]), float(values[-1])

    @staticmethod
    def inertia_invariance(
        A: Matrix, B1: Matrix, B2: Matrix, tau: Optional[float] = None, k: Optional[int] = None
    ) -> Dict[str, Any]:
        """
        Compare (index, nullity) of A under two SPD scalar products

        With τ omitted, both problems are classified at the algebraic threshold.
        Otherwise B₂ uses τ·s, s = max xᵀB₁x/xᵀB₂x, since |λ| scales by at most s.
        With k given only the lowest k pairs are solved for (shift-invert above
        the dense limit); agree is None when either count may be truncated.
        """
        dof = A.shape[0]
        if k is None:
            first = SpectraService.solve(A, B1, dof, method="dense")
            second = SpectraService.solve(A, B2, dof, method="dense")
        else:
            first = SpectraService.solve(A, B1, k)
            second = SpectraService.solve(A, B2, k)
        if tau is None:
            tau1 = tau2 = ALGEBRAIC_TAU
            scale = (1.0, 1.0)
        else:
            scale = SpectraService.scale_bounds(B1, B2)
            tau1, tau2 = tau, tau * scale[1]
        c1 = SpectraService.classify(first, tau1)
        c2 = SpectraService.classify(second, tau2)
        agree: Optional[bool] = (c1.index, c1.nullity) == (c2.index, c2.nullity)
        if k is not None and k < dof and (c1.truncated or c2.truncated):
            agree = None
        if agree is False:
            logger.warning(f"Inertia differs: {(c1.index, c1.nullity)} vs {(c2.index, c2.nullity)}")
        return {
            "first": c1.as_dict(),
            "second": c2.as_dict(),
            "scale_bounds": list(scale),
            "solver": first.solver,
            "agree": agree,
        }

    # ===== ALGEBRAIC TEST PROBLEMS =====

    @staticmethod
    def random_spd(n: int, rng: np.random.Generator, condition: float = 1e3) -> np.ndarray:
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        spectrum = np.exp(rng.uniform(0.0, np.log(condition), size=n))
        return (Q * spectrum) @ Q.T

    @staticmethod
    def planted(negative: int, null: int, positive: int, rng: np.random.Generator) -> np.ndarray:
        """Symmetric matrix with the requested inertia, eigenvalues away from zero by ≥ 0.5"""
        values = np.concatenate(
            [
                -rng.uniform(0.5, 5.0, size=negative),
                np.zeros(null),
                rng.uniform(0.5, 5.0, size=positive),
            ]
        )
        Q, _ = np.linalg.qr(rng.standard_normal((len(values), len(values))))
        A = (Q * values) @ Q.T
        return 0.5 * (A + A.T)
