"""
Harmonic map families on S² and the conformal charts that organize bubbling
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import integrate

from src.errors import ConfigError, GeometryError
from src.geometry.manifold import AugmentedEmbedding, CliffordTorus, RoundSphere, TargetManifold
from src.geometry.mesh import CylinderGrid, SurfaceMesh

logger = logging.getLogger(__name__)

COMMON_ROOT_TOLERANCE = 1e-8
FORMULA_STEP = 1e-3


# ===== STEREOGRAPHIC COORDINATES =====


def _normalize_pair(z0: np.ndarray, z1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scale = np.maximum(np.abs(z0), np.abs(z1))
    scale = np.where(scale > 0, scale, 1.0)
    return z0 / scale, z1 / scale


def sphere_to_homogeneous(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Homogeneous stereographic coordinates [z0 : z1] from the north pole

    z = z0/z1 = (x1 + i x2)/(1 − x3); the north pole is [1 : 0].
    """
    x = np.asarray(x, dtype=float)
    south = x[..., 2] < 0
    z0 = np.where(south, x[..., 0] + 1j * x[..., 1], 1.0 + x[..., 2])
    z1 = np.where(south, 1.0 - x[..., 2], x[..., 0] - 1j * x[..., 1])
    return _normalize_pair(z0.astype(complex), z1.astype(complex))


def homogeneous_to_sphere(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """Inverse stereographic projection of [z0 : z1]"""
    z0, z1 = _normalize_pair(np.asarray(z0, dtype=complex), np.asarray(z1, dtype=complex))
    cross = z0 * np.conj(z1)
    a, b = np.abs(z0) ** 2, np.abs(z1) ** 2
    denom = a + b
    return np.stack([2.0 * cross.real, 2.0 * cross.imag, a - b], axis=-1) / denom[..., None]


def complex_to_sphere(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return homogeneous_to_sphere(z, np.ones_like(z))


# ===== CONFORMAL CHARTS =====


@dataclass(frozen=True, eq=False)
class Mobius:
    """z ↦ (az + b)/(cz + d) acting on homogeneous coordinates"""

    a: complex = 1.0
    b: complex = 0.0
    c: complex = 0.0
    d: complex = 1.0

    def __post_init__(self):
        if abs(self.determinant) < 1e-300:
            raise GeometryError(f"non-invertible Möbius chart ({self.a}, {self.b}, {self.c}, {self.d})")

    @classmethod
    def dilation(cls, center: complex, scale: float) -> "Mobius":
        """m(z) = p + r z"""
        if scale <= 0:
            raise GeometryError(f"dilation scale must be positive, got {scale}")
        return cls(a=complex(scale), b=complex(center), c=0.0, d=1.0)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Mobius":
        return cls(*(complex(v) for v in np.asarray(matrix).ravel()))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @property
    def determinant(self) -> complex:
        return self.a * self.d - self.b * self.c

    def is_identity(self) -> bool:
        m = self.matrix / self.d if self.d != 0 else self.matrix
        return bool(np.allclose(m, np.eye(2), atol=1e-15, rtol=0))

    def inverse(self) -> "Mobius":
        return Mobius(self.d, -self.b, -self.c, self.a)

    def then(self, other: "Mobius") -> "Mobius":
        """other ∘ self"""
        return Mobius.from_matrix(other.matrix @ self.matrix)

    def apply_homogeneous(self, z0, z1):
        return _normalize_pair(self.a * z0 + self.b * z1, self.c * z0 + self.d * z1)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return (self.a * z + self.b) / (self.c * z + self.d)

    def apply_sphere(self, x: np.ndarray) -> np.ndarray:
        return homogeneous_to_sphere(*self.apply_homogeneous(*sphere_to_homogeneous(x)))

    def conformal_factor(self, z) -> np.ndarray:
        """|∇m|² = 2|m'(z)|² in the flat coordinate"""
        z = np.asarray(z, dtype=complex)
        return 2.0 * np.abs(self.determinant) ** 2 / np.abs(self.c * z + self.d) ** 4


@dataclass(frozen=True)
class NeckChart:
    """n(t + iθ) = p + ρ e^{−(t + iθ)}"""

    center: complex
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise GeometryError(f"neck chart radius must be positive, got {self.rho}")

    def __call__(self, t, theta) -> np.ndarray:
        return self.center + self.rho * np.exp(-(np.asarray(t) + 1j * np.asarray(theta)))

    def conformal_factor(self, t) -> np.ndarray:
        """|∇n|² = 2ρ² e^{−2t}"""
        return 2.0 * self.rho**2 * np.exp(-2.0 * np.asarray(t, dtype=float))

    def inverse(self, z) -> Tuple[np.ndarray, np.ndarray]:
        w = np.log((np.asarray(z, dtype=complex) - self.center) / self.rho)
        return -w.real, np.mod(-w.imag, 2.0 * np.pi)


Chart = Union[Mobius, NeckChart]


# ===== ANALYTIC FAMILIES =====


def _trim(coeffs) -> np.ndarray:
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=complex))
    nonzero = np.flatnonzero(np.abs(coeffs) > 0)
    if len(nonzero) == 0:
        return np.zeros(1, dtype=complex)
    return coeffs[nonzero[0] :]


@dataclass(frozen=True, eq=False)
class RationalFamily:
    """
    w ↦ p(m(w))/q(m(w)) with coefficient lists in descending powers and a
    Möbius pre-composition m, evaluated homogeneously so poles and ∞ are exact
    """

    numerator: Tuple[complex, ...]
    denominator: Tuple[complex, ...] = (1.0,)
    pre: Mobius = field(default_factory=Mobius)
    target: str = "sphere2"

    def __post_init__(self):
        p, q = _trim(self.numerator), _trim(self.denominator)
        if not np.any(q):
            raise GeometryError("rational map with zero denominator")
        object.__setattr__(self, "numerator", tuple(p))
        object.__setattr__(self, "denominator", tuple(q))
        if np.any(p) and len(p) > 1 and len(q) > 1:
            rp, rq = np.roots(p), np.roots(q)
            gap = np.min(np.abs(rp[:, None] - rq[None, :]))
            if gap < COMMON_ROOT_TOLERANCE:
                raise GeometryError(
                    "numerator and denominator share a root", {"distance": float(gap)}
                )

    @property
    def degree(self) -> int:
        if self.is_constant:
            return 0
        return max(len(self.numerator), len(self.denominator)) - 1

    @property
    def is_constant(self) -> bool:
        p, q = np.array(self.numerator), np.array(self.denominator)
        return not np.any(p) or (len(p) == 1 and len(q) == 1)

    def _homogeneous(self, coeffs: Tuple[complex, ...], z0, z1, d: int):
        powers = np.arange(len(coeffs) - 1, -1, -1)
        out = np.zeros(np.broadcast(z0, z1).shape, dtype=complex)
        for c, j in zip(coeffs, powers):
            out = out + c * z0**j * z1 ** (d - j)
        return out

    def evaluate_homogeneous(self, z0, z1):
        z0, z1 = self.pre.apply_homogeneous(np.asarray(z0, dtype=complex), np.asarray(z1, dtype=complex))
        d = max(len(self.numerator), len(self.denominator)) - 1
        return (
            self._homogeneous(self.numerator, z0, z1, d),
            self._homogeneous(self.denominator, z0, z1, d),
        )

    def on_sphere(self, x: np.ndarray) -> np.ndarray:
        return homogeneous_to_sphere(*self.evaluate_homogeneous(*sphere_to_homogeneous(x)))

    def on_plane(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return homogeneous_to_sphere(*self.evaluate_homogeneous(z, np.ones_like(z)))

    def value_at_infinity(self) -> np.ndarray:
        return homogeneous_to_sphere(*self.evaluate_homogeneous(np.array(1.0 + 0j), np.array(0j)))

    def precompose(self, chart: Mobius) -> "RationalFamily":
        """self ∘ chart"""
        return RationalFamily(self.numerator, self.denominator, chart.then(self.pre), self.target)

    def energy_density(self, z) -> np.ndarray:
        """
        ½|∇(S⁻¹∘R)|² = 4|R'|²/(1 + |R|²)² in the flat coordinate, pole-safe
        """
        z = np.asarray(z, dtype=complex)
        m = self.pre
        w0, w1 = m.a * z + m.b, m.c * z + m.d
        d = max(len(self.numerator), len(self.denominator)) - 1
        if d == 0 or self.is_constant:
            return np.zeros(z.shape)
        P, P0, P1 = self._with_partials(self.numerator, w0, w1, d)
        Q, Q0, Q1 = self._with_partials(self.denominator, w0, w1, d)
        # R' Q² = det(m) (P_0 Q_1 − P_1 Q_0)/d by Euler's identity
        jacobian = m.determinant * (P0 * Q1 - P1 * Q0) / d
        return 4.0 * np.abs(jacobian) ** 2 / (np.abs(P) ** 2 + np.abs(Q) ** 2) ** 2

    def _with_partials(self, coeffs: Tuple[complex, ...], w0, w1, d: int):
        value = np.zeros(np.broadcast(w0, w1).shape, dtype=complex)
        d0 = np.zeros_like(value)
        d1 = np.zeros_like(value)
        for c, j in zip(coeffs, range(len(coeffs) - 1, -1, -1)):
            k = d - j
            value = value + c * w0**j * w1**k
            if j > 0:
                d0 = d0 + c * j * w0 ** (j - 1) * w1**k
            if k > 0:
                d1 = d1 + c * k * w0**j * w1 ** (k - 1)
        return value, d0, d1

    def describe(self) -> str:
        parts = f"rational:{_format_coeffs(self.numerator)}/{_format_coeffs(self.denominator)}"
        if not self.pre.is_identity():
            return f"compose({parts}, mobius:{self.pre.a},{self.pre.b},{self.pre.c},{self.pre.d})"
        return parts


def _format_coeffs(coeffs) -> str:
    def fmt(c: complex) -> str:
        return f"{c.real:g}" if c.imag == 0 else f"{c:g}"

    return "[" + ",".join(fmt(complex(c)) for c in coeffs) + "]"


@dataclass(frozen=True)
class AmbientFamily:
    """Non-holomorphic test maps given by an ambient formula on S²"""

    kind: str
    strength: float = 0.3

    @property
    def target(self) -> str:
        return "clifford" if self.kind == "torus-test" else "sphere2"

    def on_sphere(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "shear":
            sheared = x.copy()
            sheared[..., 0] = x[..., 0] + self.strength * x[..., 2]
            return RoundSphere(2).closest_point(sheared)
        if self.kind == "torus-test":
            lifted = np.stack([x[..., 0] + 2.0, x[..., 1], x[..., 2] + 2.0, x[..., 1]], axis=-1)
            return CliffordTorus().closest_point(lifted)
        raise ConfigError(f"unknown ambient family '{self.kind}'")

    def describe(self) -> str:
        return self.kind if self.kind == "torus-test" else f"{self.kind}:{self.strength:g}"


Family = Union[RationalFamily, AmbientFamily]


# ===== FIELDS =====


@dataclass(frozen=True, eq=False)
class MapField:
    """Vertex values of a map from a sphere mesh into N ⊂ R^m"""

    mesh: SurfaceMesh
    values: np.ndarray
    manifold: TargetManifold
    provenance: str
    family: Optional[Family] = None
    interpolated: bool = False

    def __post_init__(self):
        if self.values.shape != (self.mesh.n_vertices, self.manifold.ambient_dim):
            raise GeometryError(
                f"map values have shape {self.values.shape}, expected "
                f"({self.mesh.n_vertices}, {self.manifold.ambient_dim})"
            )
        self.manifold.check_on_manifold(self.values)

    def gradient(self) -> np.ndarray:
        """Per-triangle ∇u, shape (F, m, 3)"""
        return self.mesh.gradient(self.values)


@dataclass(frozen=True, eq=False)
class CylinderField:
    """
    Map sampled on a CylinderGrid, values shape (n_t, n_θ, m)

    Fields built from a formula carry derivatives from a fourth-order stencil
    of that formula; sampled fields fall back to the grid operators.
    """

    grid: CylinderGrid
    values: np.ndarray
    provenance: str
    chart: Optional[NeckChart] = None
    interpolated: bool = False
    d_t: Optional[np.ndarray] = None
    d_theta: Optional[np.ndarray] = None

    @classmethod
    def from_function(
        cls,
        grid: CylinderGrid,
        func: Callable[[np.ndarray, np.ndarray], np.ndarray],
        provenance: str,
        chart: Optional[NeckChart] = None,
        step: float = FORMULA_STEP,
    ) -> "CylinderField":
        T, TH = grid.mesh_grid

        def stencil(shift_t: float, shift_theta: float) -> np.ndarray:
            return (
                -func(T + 2 * step * shift_t, TH + 2 * step * shift_theta)
                + 8.0 * func(T + step * shift_t, TH + step * shift_theta)
                - 8.0 * func(T - step * shift_t, TH - step * shift_theta)
                + func(T - 2 * step * shift_t, TH - 2 * step * shift_theta)
            ) / (12.0 * step)

        return cls(grid, func(T, TH), provenance, chart, False, stencil(1.0, 0.0), stencil(0.0, 1.0))

    def derivatives(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.d_t is not None and self.d_theta is not None:
            return self.d_t, self.d_theta
        return self.grid.d_t(self.values), self.grid.d_theta(self.values)

    def gradient_squared(self) -> np.ndarray:
        vt, vth = self.derivatives()
        return np.sum(vt**2 + vth**2, axis=-1)


def parse_complex(text: str) -> complex:
    try:
        return complex(text.strip().replace("i", "j").replace(" ", ""))
    except ValueError:
        raise ConfigError(f"invalid complex number '{text}'")


def _split_top_level(text: str) -> List[str]:
    depth, start, parts = 0, 0, []
    for pos, ch in enumerate(text):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:pos])
            start = pos + 1
    parts.append(text[start:])
    return parts


def parse_chart(text: str) -> Chart:
    kind, _, args = text.strip().partition(":")
    values = [parse_complex(v) for v in args.split(",")] if args else []
    if kind == "dilation" and len(values) == 2:
        return Mobius.dilation(values[0], values[1].real)
    if kind == "mobius" and len(values) == 4:
        return Mobius(*values)
    if kind == "neck" and len(values) == 2:
        return NeckChart(values[0], values[1].real)
    raise ConfigError(f"invalid chart spec '{text}'")


_RATIONAL = re.compile(r"^rational:\[(?P<num>[^\]]*)\]/\[(?P<den>[^\]]*)\]$")


class MapService:
    """Construction and analysis of maps from S² into a target manifold"""

    # ===== FAMILIES =====

    @staticmethod
    def parse_family(spec: str) -> Family:
        """
        Parse a map family spec

        Accepts "identity", "rational:[p...]/[q...]" (descending powers),
        "shear:s", "torus-test" and "compose(<family>, <chart>)" with chart
        "dilation:p,r" or "mobius:a,b,c,d".
        """
        spec = spec.strip()
        if spec == "identity":
            return RationalFamily((1.0, 0.0), (1.0,))
        if spec == "torus-test":
            return AmbientFamily("torus-test")
        if spec.startswith("shear"):
            _, _, value = spec.partition(":")
            return AmbientFamily("shear", float(value) if value else 0.3)
        match = _RATIONAL.match(spec.replace(" ", ""))
        if match:
            num = [parse_complex(c) for c in match["num"].split(",") if c.strip()]
            den = [parse_complex(c) for c in match["den"].split(",") if c.strip()]
            if not num or not den:
                raise ConfigError(f"empty coefficient list in '{spec}'")
            return RationalFamily(tuple(num), tuple(den))
        if spec.startswith("compose(") and spec.endswith(")"):
            parts = _split_top_level(spec[len("compose(") : -1])
            for split in range(len(parts) - 1, 0, -1):
                chart_text = ",".join(parts[split:]).strip()
                if chart_text.split(":")[0] in ("dilation", "mobius"):
                    inner = MapService.parse_family(",".join(parts[:split]))
                    chart = parse_chart(chart_text)
                    if not isinstance(inner, RationalFamily):
                        raise ConfigError(f"only rational families compose analytically: '{spec}'")
                    return inner.precompose(chart)
        raise ConfigError(f"unknown map family spec '{spec}'")

    @staticmethod
    def target_values(family: Family, points: np.ndarray, manifold: TargetManifold) -> np.ndarray:
        """Family values at sphere points, lifted into the manifold's ambient space"""
        base = manifold.base if isinstance(manifold, AugmentedEmbedding) else manifold
        if base.name != family.target:
            raise ConfigError(f"family with target '{family.target}' cannot map into '{manifold.name}'")
        values = family.on_sphere(points)
        if isinstance(manifold, AugmentedEmbedding):
            values = manifold.immerse(values)
        return values

    @staticmethod
    def rational_map(
        mesh: SurfaceMesh,
        numerator,
        denominator=(1.0,),
        manifold: Optional[TargetManifold] = None,
    ) -> MapField:
        """Sample p(z)/q(z) on the mesh through stereographic coordinates"""
        family = RationalFamily(tuple(numerator), tuple(denominator))
        return MapService.realize(mesh, family, manifold)

    @staticmethod
    def realize(mesh: SurfaceMesh, family: Family, manifold: Optional[TargetManifold] = None) -> MapField:
        manifold = manifold or RoundSphere(2)
        if isinstance(family, RationalFamily) and family.is_constant:
            logger.info("Rational family is constant")
        values = MapService.target_values(family, mesh.vertices, manifold)
        return MapField(mesh, values, manifold, family.describe(), family)

    @staticmethod
    def constant_map(mesh: SurfaceMesh, point: np.ndarray, manifold: TargetManifold) -> MapField:
        point = np.asarray(point, dtype=float)
        values = np.repeat(point[None, :], mesh.n_vertices, axis=0)
        return MapField(mesh, values, manifold, f"constant:{np.round(point, 12).tolist()}")

    @staticmethod
    def reference_point(manifold: TargetManifold) -> np.ndarray:
        """Projection of (1, ..., 1) onto N, lifted when augmented"""
        base = manifold.base if isinstance(manifold, AugmentedEmbedding) else manifold
        point = base.closest_point(np.ones(base.ambient_dim))
        if isinstance(manifold, AugmentedEmbedding):
            point = manifold.immerse(point)
        return point

    @staticmethod
    def from_spec(mesh: SurfaceMesh, spec: str, manifold: TargetManifold) -> MapField:
        """Map of a family spec, where "constant" is the constant map at the reference point"""
        if spec.strip() == "constant":
            return MapService.constant_map(mesh, MapService.reference_point(manifold), manifold)
        return MapService.realize(mesh, MapService.parse_family(spec), manifold)

    # ===== COMPOSITION =====

    @staticmethod
    def compose(u: MapField, chart: Mobius) -> MapField:
        """u ∘ m resampled on u's mesh; analytic when the family allows it"""
        if isinstance(u.family, RationalFamily):
            return MapService.realize(u.mesh, u.family.precompose(chart), u.manifold)
        logger.warning(f"Composing '{u.provenance}' by interpolation")
        points = chart.apply_sphere(u.mesh.vertices)
        values = u.manifold.closest_point(u.mesh.interpolate(u.values, points))
        return MapField(u.mesh, values, u.manifold, f"compose({u.provenance}, interpolated)", None, True)

    @staticmethod
    def neck_pullback(
        source: Union[MapField, Family],
        grid: CylinderGrid,
        chart: NeckChart,
        manifold: Optional[TargetManifold] = None,
    ) -> CylinderField:
        """v(t, θ) = u(n(t + iθ)) on the neck grid"""
        if isinstance(source, MapField):
            manifold = source.manifold
            family = source.family
        else:
            family = source
            manifold = manifold or RoundSphere(2)
        if family is not None:
            base = manifold.base if isinstance(manifold, AugmentedEmbedding) else manifold
            if base.name != family.target:
                raise ConfigError(f"family with target '{family.target}' cannot map into '{manifold.name}'")

            def sample(t: np.ndarray, theta: np.ndarray) -> np.ndarray:
                z = chart(t, theta)
                if isinstance(family, RationalFamily):
                    values = family.on_plane(z)
                    if isinstance(manifold, AugmentedEmbedding):
                        values = manifold.immerse(values)
                    return values
                points = complex_to_sphere(z).reshape(-1, 3)
                return MapService.target_values(family, points, manifold).reshape(z.shape + (-1,))

            return CylinderField.from_function(grid, sample, f"neck({family.describe()})", chart)
        logger.warning(f"Pulling '{source.provenance}' back to the neck by interpolation")
        T, TH = grid.mesh_grid
        points = complex_to_sphere(chart(T, TH)).reshape(-1, 3)
        values = manifold.closest_point(source.mesh.interpolate(source.values, points))
        return CylinderField(grid, values.reshape(T.shape + (-1,)), f"neck({source.provenance})", chart, True)

    # ===== ENERGY AND RESIDUALS =====

    @staticmethod
    def triangle_energies(u: MapField) -> np.ndarray:
        grad = u.gradient()
        return 0.5 * u.mesh.areas * np.sum(grad**2, axis=(1, 2))

    @staticmethod
    def dirichlet_energy(u: Union[MapField, CylinderField]) -> float:
        """E(u) = ½∫|∇u|²"""
        if isinstance(u, CylinderField):
            return 0.5 * u.grid.integrate(u.gradient_squared())
        return float(np.sum(MapService.triangle_energies(u)))

    @staticmethod
    def discrete_laplacian(u: MapField) -> np.ndarray:
        """Lumped weak Laplacian −M_L⁻¹ K u, per vertex"""
        return -(u.mesh.stiffness @ u.values) / u.mesh.lumped_mass[:, None]

    @staticmethod
    def harmonic_residual(u: MapField) -> float:
        """Lumped L² norm of P(u) Δu"""
        lap = MapService.discrete_laplacian(u)
        P = u.manifold.tangent_projection(u.values, check=False)
        tangential = np.einsum("vij,vj->vi", P, lap)
        return float(np.sqrt(np.sum(u.mesh.lumped_mass * np.sum(tangential**2, axis=1))))

    @staticmethod
    def analytic_energy(
        family: RationalFamily,
        inner: float = 0.0,
        outer: float = np.inf,
        center: complex = 0.0,
        n_theta: int = 512,
    ) -> float:
        """
        Energy of a rational family over {inner ≤ |z − center| ≤ outer} by
        log-radial quadrature of the pole-safe density
        """
        theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
        ring = np.exp(1j * theta)

        def ring_energy(s: float, fam: RationalFamily, shift: complex) -> float:
            r = np.exp(s)
            return float(np.mean(fam.energy_density(shift + r * ring))) * 2.0 * np.pi * r * r

        def radial(lo: float, hi: float, fam: RationalFamily, shift: complex) -> float:
            if hi <= lo:
                return 0.0
            lo = max(lo, 1e-14)
            value, _ = integrate.quad(ring_energy, np.log(lo), np.log(hi), args=(fam, shift), limit=400)
            return value

        near = radial(inner, min(outer, 1.0), family, center)
        if outer <= 1.0:
            return near
        # |z − c| ≥ 1 maps to |ζ| ≤ 1 under z = c + 1/ζ
        flipped = family.precompose(Mobius(center, 1.0, 1.0, 0.0))
        lo = 1.0 / outer if np.isfinite(outer) else 0.0
        return near + radial(lo, min(1.0 / max(inner, 1e-300), 1.0), flipped, 0.0)

    # ===== HOPF DIFFERENTIAL =====

    @staticmethod
    def hopf_differential(v: CylinderField) -> Dict[str, np.ndarray]:
        """φ = ⟨∂_z v, ∂_z v⟩ with z = t + iθ, plus per-slice balance"""
        grid = v.grid
        vt, vth = v.derivatives()
        t_sq = np.sum(vt**2, axis=-1)
        th_sq = np.sum(vth**2, axis=-1)
        phi = 0.25 * (t_sq - th_sq - 2j * np.sum(vt * vth, axis=-1))
        slice_t = grid.slice_integral(t_sq)
        slice_theta = grid.slice_integral(th_sq)
        return {
            "phi": phi,
            "gradient_squared": t_sq + th_sq,
            "slice_t": slice_t,
            "slice_theta": slice_theta,
            "slice_imbalance": slice_t - slice_theta,
        }

    # ===== EXPORT =====

    @staticmethod
    def export_field(u: Union[MapField, CylinderField]) -> Dict[str, Any]:
        if isinstance(u, CylinderField):
            return {
                "provenance": u.provenance,
                "t": u.grid.t.tolist(),
                "theta": u.grid.theta.tolist(),
                "values": u.values.tolist(),
                "interpolated": u.interpolated,
            }
        return {
            "provenance": u.provenance,
            "manifold": u.manifold.name,
            "vertices": u.mesh.vertices.tolist(),
            "values": u.values.tolist(),
            "interpolated": u.interpolated,
        }
