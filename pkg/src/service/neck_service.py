"""
Analysis on neck cylinders [−L, L] × T¹: Poisson solves, tangential decay,
the maximum-principle bound and the quantitative no-neck check
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, linalg

from src.errors import ResolutionError
from src.geometry.mesh import CylinderGrid, cylinder
from src.service.maps_service import CylinderField, MapService, NeckChart, RationalFamily

logger = logging.getLogger(__name__)

TANGENTIAL_RATE = 1.0 / 9.0
GRADIENT_RATE = 1.0 / 10.0
EPSILON_REGULARITY = 0.5
BALANCE_TOLERANCE = 0.01
ABS_FLOOR = 1e-24
LINFTY_LIMIT = 1.0
SOURCE_INSET = 3.0


@dataclass
class NeckProfile:
    """Per-slice decay data of a field on a neck"""

    t0: np.ndarray
    e_t0: np.ndarray
    sup_grad2: np.ndarray
    bound_rhs: np.ndarray
    total_energy: float
    sup_norm: float
    decay_exponent: Optional[float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"t0": self.t0, "e_t0": self.e_t0, "sup_grad2": self.sup_grad2, "bound_rhs": self.bound_rhs}
        )


# ===== HELPERS =====


def _window_integral(grid: CylinderGrid, slices: np.ndarray, half_width: float = 1.0) -> np.ndarray:
    """∫_{[t−w, t+w]} slices dt at every grid t, clipped to the neck"""
    cumulative = integrate.cumulative_trapezoid(slices, grid.t, initial=0.0)
    L = grid.half_length
    lo = np.clip(grid.t - half_width, -L, L)
    hi = np.clip(grid.t + half_width, -L, L)
    return np.interp(hi, grid.t, cumulative) - np.interp(lo, grid.t, cumulative)


def _source_term(grid: CylinderGrid, f: np.ndarray) -> np.ndarray:
    """∫ min{e^{(1−|t−t₀|)/9}, 1} |f|² for every grid t₀"""
    per_slice = grid.slice_integral(f**2) * grid.t_weights
    distance = np.abs(grid.t[:, None] - grid.t[None, :])
    weights = np.minimum(np.exp((1.0 - distance) * TANGENTIAL_RATE), 1.0)
    return weights @ per_slice


def _ratios(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    lhs = np.where(np.abs(lhs) <= ABS_FLOOR, 0.0, lhs)
    safe = np.where(rhs > 0, rhs, 1.0)
    return np.where(rhs > 0, lhs / safe, np.where(lhs > 0, np.inf, 0.0))


def _fit_slope(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Least-squares slope of log y against x, None when y is numerically zero"""
    keep = y > ABS_FLOOR
    if np.count_nonzero(keep) < 3:
        return None
    return float(np.polyfit(x[keep], np.log(y[keep]), 1)[0])


def _finite(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


class NeckService:
    """Neck estimates on flat cylinders"""

    # ===== GRIDS AND FIELDS =====

    @staticmethod
    def grid_for(half_length: float, dt: float = 0.05, n_theta: int = 32) -> CylinderGrid:
        n_t = max(16, int(round(2.0 * half_length / dt)) + 1)
        return cylinder(half_length, n_t, n_theta)

    @staticmethod
    def one_sided_bubble(half_length: float, buffer: float = 0.1) -> Tuple[RationalFamily, NeckChart]:
        """Identity bubble seen through a neck whose end t = −L sits at |z| = buffer"""
        return RationalFamily((1.0, 0.0), (1.0,)), NeckChart(0.0, buffer * np.exp(-half_length))

    @staticmethod
    def two_sided_bubble(half_length: float, delta: float = 0.1) -> Tuple[RationalFamily, NeckChart]:
        """
        z ↦ z + ε²/z through the neck chart of radius ε, with ε = δe^{−L}

        Written as ζ ↦ ε(ζ + 1/ζ) in the unit chart so that the coefficients
        stay well separated for long necks; |v| reaches δ at both ends.
        """
        eps = delta * np.exp(-half_length)
        return RationalFamily((eps, 0.0, eps), (1.0, 0.0)), NeckChart(0.0, 1.0)

    @staticmethod
    def end_sources(grid: CylinderGrid, inset: float = SOURCE_INSET) -> np.ndarray:
        """Mean-free forcing cos θ·(e^{−(t−c)²} + e^{−(t+c)²}) with c = L − inset"""
        T, TH = grid.mesh_grid
        c = grid.half_length - inset
        return (np.exp(-((T - c) ** 2)) + np.exp(-((T + c) ** 2))) * np.cos(TH)

    @staticmethod
    def neck_field(family: RationalFamily, chart: NeckChart, grid: CylinderGrid) -> CylinderField:
        return MapService.neck_pullback(family, grid, chart)

    @staticmethod
    def constant_field(grid: CylinderGrid, point: Sequence[float] = (0.0, 0.0, 1.0)) -> CylinderField:
        value = np.asarray(point, dtype=float)

        def sample(t, theta):
            return np.broadcast_to(value, np.shape(t) + value.shape).copy()

        return CylinderField.from_function(grid, sample, f"constant:{value.tolist()}")

    @staticmethod
    def non_conformal_field(grid: CylinderGrid, tilt: float = 0.3) -> CylinderField:
        """(cos θ sin α, sin θ sin α, cos α) with α = 1 + tilt·t/L, not harmonic"""
        L = grid.half_length

        def sample(t, theta):
            alpha = 1.0 + tilt * t / L
            return np.stack([np.cos(theta) * np.sin(alpha), np.sin(theta) * np.sin(alpha), np.cos(alpha)], axis=-1)

        return CylinderField.from_function(grid, sample, f"non-conformal:{tilt:g}")

    # ===== POISSON =====

    @staticmethod
    def poisson_solve(grid: CylinderGrid, f: np.ndarray, left=0.0, right=0.0) -> np.ndarray:
        """
        Solve −Δφ = f with φ(−L, ·) = left and φ(L, ·) = right

        Fourier in θ (every mode, Nyquist included), a tridiagonal solve in t
        per mode with second-order differences.
        """
        f = np.asarray(f, dtype=float)
        if f.shape != (grid.n_t, grid.n_theta):
            raise ResolutionError(f"source has shape {f.shape}, expected ({grid.n_t}, {grid.n_theta})")
        left = np.broadcast_to(np.asarray(left, dtype=float), (grid.n_theta,))
        right = np.broadcast_to(np.asarray(right, dtype=float), (grid.n_theta,))

        k = np.fft.fftfreq(grid.n_theta, d=1.0 / grid.n_theta)
        f_hat = np.fft.fft(f, axis=1)
        left_hat, right_hat = np.fft.fft(left), np.fft.fft(right)
        inv = 1.0 / grid.dt**2
        n = grid.n_t - 2

        banded = np.zeros((3, n))
        banded[0, 1:] = -inv
        banded[2, :-1] = -inv
        phi_hat = np.empty((grid.n_t, grid.n_theta), dtype=complex)
        phi_hat[0], phi_hat[-1] = left_hat, right_hat
        for j, kj in enumerate(k):
            banded[1] = 2.0 * inv + kj**2
            rhs = f_hat[1:-1, j].copy()
            rhs[0] += inv * left_hat[j]
            rhs[-1] += inv * right_hat[j]
            phi_hat[1:-1, j] = linalg.solve_banded((1, 1), banded, rhs)
        return np.real(np.fft.ifft(phi_hat, axis=1))

    @staticmethod
    def discrete_laplacian(grid: CylinderGrid, phi: np.ndarray) -> np.ndarray:
        """Interior rows of −Δ_h φ, the operator poisson_solve inverts"""
        phi = np.asarray(phi, dtype=float)
        k = np.fft.fftfreq(grid.n_theta, d=1.0 / grid.n_theta)
        theta_part = np.real(np.fft.ifft(np.fft.fft(phi, axis=1) * k**2, axis=1))
        t_part = -(phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / grid.dt**2
        return t_part + theta_part[1:-1]

    @staticmethod
    def poisson_residual(grid: CylinderGrid, phi: np.ndarray, f: np.ndarray) -> float:
        residual = NeckService.discrete_laplacian(grid, phi) - np.asarray(f, dtype=float)[1:-1]
        return float(np.max(np.abs(residual)))

    @staticmethod
    def manufactured_solution(
        grid: CylinderGrid,
        solution: Callable[[np.ndarray, np.ndarray], np.ndarray],
        laplacian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    ) -> Dict[str, float]:
        """
        Solve for f = −Δφ* with φ*'s boundary values and measure the error

        With an analytic Laplacian the error is the discretization error; without
        one f comes from the discrete operator and φ* must be recovered exactly.
        """
        T, TH = grid.mesh_grid
        exact = solution(T, TH)
        if laplacian is not None:
            f = -laplacian(T, TH)
        else:
            f = np.zeros_like(exact)
            f[1:-1] = NeckService.discrete_laplacian(grid, exact)
        phi = NeckService.poisson_solve(grid, f, exact[0], exact[-1])
        return {
            "dt": grid.dt,
            "error": float(np.max(np.abs(phi - exact))),
            "residual": NeckService.poisson_residual(grid, phi, f),
        }

    @staticmethod
    def convergence_order(errors: Sequence[float], steps: Sequence[float]) -> float:
        return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])

    # ===== TANGENTIAL ESTIMATE =====

    @staticmethod
    def tangential_bound(grid: CylinderGrid, phi: np.ndarray, f: np.ndarray) -> np.ndarray:
        """e^{−(L−|t₀|)/9}∫|∇φ|² + ∫min{e^{(1−|t−t₀|)/9}, 1}|f|² at every t₀"""
        total = grid.integrate(grid.gradient_squared(phi))
        decay = np.exp(-(grid.half_length - np.abs(grid.t)) * TANGENTIAL_RATE)
        return decay * total + _source_term(grid, f)

    @staticmethod
    def tangential_estimate_check(grid: CylinderGrid, phi: np.ndarray, f: Optional[np.ndarray] = None) -> Dict:
        """
        Smallest C with ∫_{t₀}|∂_θφ|² + ∫_{[t₀−1,t₀+1]}|∇∂_θφ|² ≤ C·bound(t₀) over |t₀| ≤ L−1
        """
        phi = np.asarray(phi, dtype=float)
        f = np.zeros_like(phi) if f is None else np.asarray(f, dtype=float)
        L, t = grid.half_length, grid.t

        phi_theta = grid.d_theta(phi)
        e = grid.slice_integral(phi_theta**2)
        window = _window_integral(grid, grid.slice_integral(grid.gradient_squared(phi_theta)))
        bound = NeckService.tangential_bound(grid, phi, f)
        sweep = np.abs(t) <= L - 1.0
        if not sweep.any():
            raise ResolutionError(f"half length {L:g} leaves no slice with |t₀| ≤ L − 1")
        constant = float(np.max(_ratios((e + window)[sweep], bound[sweep])))

        fit = (np.abs(t) >= L / 3.0) & (np.abs(t) <= L - 2.0)
        exponent = _fit_slope(np.abs(t[fit]), e[fit])
        profile = NeckProfile(
            t0=t[sweep],
            e_t0=e[sweep],
            sup_grad2=grid.gradient_squared(phi).max(axis=1)[sweep],
            bound_rhs=bound[sweep],
            total_energy=grid.integrate(grid.gradient_squared(phi)),
            sup_norm=float(np.max(np.abs(phi))),
            decay_exponent=exponent,
        )
        logger.info(f"Tangential estimate at L={L:g}: C={constant:.4g}, exponent={exponent}")
        return {
            "half_length": L,
            "admissible_constant": _finite(constant),
            "decay_exponent": exponent,
            "passed": bool(np.isfinite(constant)) and (exponent is None or exponent >= TANGENTIAL_RATE),
            "profile": profile,
        }

    # ===== L∞ BOUND =====

    @staticmethod
    def linfty_check(
        grid: CylinderGrid, phi: np.ndarray, f: Optional[np.ndarray] = None, limit: float = LINFTY_LIMIT
    ) -> Dict:
        """
        Smallest c with |φ(t₀, θ)| ≤ max|boundary means| + ∫(L−|t|)|f| + c·I(t₀)^{1/2}
        over |t₀| < L−1, I being the tangential bound; passes when c ≤ limit
        """
        phi = np.asarray(phi, dtype=float)
        f = np.zeros_like(phi) if f is None else np.asarray(f, dtype=float)
        L = grid.half_length
        T, _ = grid.mesh_grid

        boundary = float(max(abs(phi[0].mean()), abs(phi[-1].mean())))
        source = grid.integrate((L - np.abs(T)) * np.abs(f))
        interior = np.abs(grid.t) < L - 1.0
        if not interior.any():
            raise ResolutionError(f"half length {L:g} leaves no slice with |t₀| < L − 1")
        sup = np.max(np.abs(phi), axis=1)[interior]
        excess = np.maximum(sup - boundary - source, 0.0)
        root = np.sqrt(np.maximum(NeckService.tangential_bound(grid, phi, f)[interior], 0.0))
        constant = float(np.max(_ratios(excess, root)))
        return {
            "half_length": L,
            "boundary_mean": boundary,
            "source_term": source,
            "sup_norm": float(np.max(sup)),
            "admissible_constant": _finite(constant),
            "limit": limit,
            "passed": bool(np.isfinite(constant) and constant <= limit),
        }

    # ===== NO-NECK PROPERTY =====

    @staticmethod
    def no_neck_decay_check(v: CylinderField, threshold: float = EPSILON_REGULARITY) -> Dict:
        """
        Gradient decay of a harmonic field on a neck against e^{(|t|−L)/10}∫|∇v|²

        Fails when some unit window carries more energy than the ε-regularity
        threshold or when |∇v|² grows toward the middle. Undecided (passed None,
        with a reason) when L ≤ 2 leaves no slice inside |t| < L − 2.
        """
        grid = v.grid
        L, t = grid.half_length, grid.t
        grad2 = v.gradient_squared()
        sup = grad2.max(axis=1)
        total = grid.integrate(grad2)
        window = _window_integral(grid, grid.slice_integral(grad2))
        sweep = np.abs(t) <= L - 1.0
        window_energy = float(np.max(window[sweep] if sweep.any() else window))
        applicable = window_energy <= threshold
        if not applicable:
            logger.warning(f"ε-regularity fails on '{v.provenance}': window energy {window_energy:.3g} > {threshold:g}")

        inner = np.abs(t) < L - 2.0
        bound = np.exp((np.abs(t) - L) * GRADIENT_RATE) * total
        reason = None
        if inner.any():
            constant = _finite(float(np.max(_ratios(sup[inner], bound[inner]))))
        else:
            constant = None
            reason = f"half length {L:g} leaves no slice with |t| < L − 2"
            logger.warning(f"No-neck check on '{v.provenance}' is undecided: {reason}")

        # slopes of log |∇v|² against |t|, positive when the field decays into the middle
        middle = np.abs(t) <= L / 3.0
        left = _fit_slope(np.abs(t[middle & (t <= 0)]), sup[middle & (t <= 0)])
        right = _fit_slope(np.abs(t[middle & (t >= 0)]), sup[middle & (t >= 0)])
        exponent = None if left is None or right is None else min(left, right)
        oscillation = float(np.linalg.norm(np.ptp(v.values[middle], axis=(0, 1))))

        if reason is not None:
            passed = None
        else:
            passed = applicable and constant is not None and (exponent is None or exponent >= GRADIENT_RATE)

        profile = NeckProfile(
            t0=t,
            e_t0=grid.slice_integral(np.sum(v.derivatives()[1] ** 2, axis=-1)),
            sup_grad2=sup,
            bound_rhs=bound,
            total_energy=total,
            sup_norm=float(np.max(np.linalg.norm(v.values, axis=-1))),
            decay_exponent=exponent,
        )
        logger.info(f"No-neck check on '{v.provenance}' at L={L:g}: C={constant}, exponent={exponent}")
        return {
            "half_length": L,
            "applicable": applicable,
            "window_energy": window_energy,
            "admissible_constant": constant,
            "left_slope": left,
            "right_slope": right,
            "decay_exponent": exponent,
            "oscillation": oscillation,
            "passed": passed,
            "reason": reason,
            "profile": profile,
        }

    @staticmethod
    def slice_balance_check(v: CylinderField, tolerance: float = BALANCE_TOLERANCE) -> Dict:
        """∫_{t}|∂_t v|² = ∫_{t}|∂_θ v|² per slice, relative to the largest slice energy"""
        hopf = MapService.hopf_differential(v)
        scale = float(np.max(hopf["slice_t"] + hopf["slice_theta"]))
        imbalance = float(np.max(np.abs(hopf["slice_imbalance"])))
        relative = imbalance / scale if scale > ABS_FLOOR else 0.0
        return {
            "relative_imbalance": relative,
            "hopf_max": float(np.max(np.abs(hopf["phi"]))),
            "passed": relative <= tolerance,
        }

    @staticmethod
    def decay_profile(
        field: Union[CylinderField, np.ndarray],
        grid: Optional[CylinderGrid] = None,
        f: Optional[np.ndarray] = None,
    ) -> NeckProfile:
        if isinstance(field, CylinderField):
            return NeckService.no_neck_decay_check(field)["profile"]
        if grid is None:
            raise ResolutionError("a scalar profile needs its cylinder grid")
        return NeckService.tangential_estimate_check(grid, field, f)["profile"]

    @staticmethod
    def growth(constants: Sequence[Optional[float]]) -> Optional[float]:
        """Ratio of the last admissible constant to the first along a sweep"""
        first, last = constants[0], constants[-1]
        if first is None or last is None:
            return None
        if first <= ABS_FLOOR:
            return 1.0 if last <= ABS_FLOOR else None
        return float(last / first)
