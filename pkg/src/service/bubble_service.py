"""
Bubbling sequences of harmonic maps S² → N built by conformal dilation,
cutoff transfer of sections, and the index/nullity and energy accounting
along them
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as la

from src.config import settings
from src.errors import ConfigError, ResolutionError
from src.geometry.manifold import AugmentedEmbedding, RoundSphere, TargetManifold
from src.geometry.mesh import CylinderGrid, SurfaceMesh
from src.service.forms_service import AssembledForms, FormsService
from src.service.maps_service import (
    MapField,
    MapService,
    Mobius,
    NeckChart,
    RationalFamily,
    complex_to_sphere,
    sphere_to_homogeneous,
)
from src.service.neck_service import NeckService
from src.service.spectra_service import Classification, SpectraService, SpectrumReport

logger = logging.getLogger(__name__)

DEFAULT_SCHEDULE = tuple(4.0**-k for k in range(1, 7))
RESOLVE_CELLS = 6.0
SEPARATION_THRESHOLD = 16.0
TRANSFER_GAP = 0.05
NECK_SHARE = 0.05
BUBBLE_SHARE = 0.05
NORTH = np.array([0.0, 0.0, 1.0])


def _map_ordered(func: Callable, items: Sequence) -> List:
    """func over items on settings.workers threads, results in input order"""
    items = list(items)
    if settings.workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        return list(pool.map(func, items))


def plane_distance(points: np.ndarray, center: complex) -> np.ndarray:
    """|z − p| in stereographic coordinates, ∞ at the north pole"""
    points = np.asarray(points, dtype=float)
    points = points / np.linalg.norm(points, axis=-1, keepdims=True)
    z0, z1 = sphere_to_homogeneous(points)
    num, den = np.abs(z0 - center * z1), np.abs(z1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)


def geodesic_distance(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    points = points / np.linalg.norm(points, axis=-1, keepdims=True)
    return np.arccos(np.clip(points @ center, -1.0, 1.0))


def cutoff_profile(distance: np.ndarray, delta: float) -> np.ndarray:
    """1 beyond δ, 0 inside δ², log(d/δ²)/log(1/δ) between"""
    d = np.maximum(np.asarray(distance, dtype=float), 1e-300)
    return np.clip(np.log(d / delta**2) / np.log(1.0 / delta), 0.0, 1.0)


def _centroid_points(mesh: SurfaceMesh) -> np.ndarray:
    c = mesh.centroids
    return c / np.linalg.norm(c, axis=1, keepdims=True)


# ===== SEQUENCES =====


@dataclass(frozen=True)
class Bubble:
    family: RationalFamily
    center: complex = 0.0


@dataclass(eq=False)
class BubbleSequence:
    """
    u_k = ω∘m_k⁻¹ with m_k(z) = p + r_k z, so that u_k∘m_k = ω exactly

    With several centers the bubbles are degree one and glued as
    u_k(z) = Σ_i r_k/(z − p_i).
    """

    bubbles: Tuple[Bubble, ...]
    schedule: Tuple[float, ...]
    manifold: TargetManifold = field(default_factory=RoundSphere)

    @property
    def summed(self) -> bool:
        return len(self.bubbles) > 1

    @property
    def ks(self) -> List[int]:
        return list(range(1, len(self.schedule) + 1))

    @property
    def degree(self) -> int:
        return len(self.bubbles) if self.summed else self.bubbles[0].family.degree

    def scale(self, k: int) -> float:
        return float(self.schedule[k - 1])

    def dilation(self, k: int, i: int = 0) -> Mobius:
        return Mobius.dilation(self.bubbles[i].center, self.scale(k))

    def family_at(self, k: int) -> RationalFamily:
        if not self.summed:
            return self.bubbles[0].family.precompose(self.dilation(k).inverse())
        r = self.scale(k)
        centers = [b.center for b in self.bubbles]
        denominator = np.poly(centers)
        numerator = sum(r * np.poly([c for j, c in enumerate(centers) if j != i]) for i in range(len(centers)))
        return RationalFamily(tuple(np.atleast_1d(numerator)), tuple(denominator))

    def chart_family(self, k: int, i: int = 0) -> RationalFamily:
        """u_k∘m_k^i"""
        return self.family_at(k).precompose(self.dilation(k, i))

    def limit_value(self) -> np.ndarray:
        if self.summed:
            value = complex_to_sphere(np.array(0j))
        else:
            value = self.bubbles[0].family.value_at_infinity()
        if isinstance(self.manifold, AugmentedEmbedding):
            value = self.manifold.immerse(value)
        return np.asarray(value, dtype=float)

    def realize(self, k: int, mesh: SurfaceMesh) -> MapField:
        return MapService.realize(mesh, self.family_at(k), self.manifold)

    def realize_chart(self, k: int, i: int, mesh: SurfaceMesh) -> MapField:
        return MapService.realize(mesh, self.chart_family(k, i), self.manifold)

    def limit_map(self, mesh: SurfaceMesh) -> MapField:
        return MapService.constant_map(mesh, self.limit_value(), self.manifold)

    def bubble_map(self, i: int, mesh: SurfaceMesh) -> MapField:
        return MapService.realize(mesh, self.bubbles[i].family, self.manifold)

    def neck_chart(self, k: int, i: int, radius: float) -> Tuple[NeckChart, float]:
        """Chart of the annulus r_k/radius < |z − p_i| < radius: ρ = √r_k, L = ½log(radius²/r_k)"""
        r = self.scale(k)
        return NeckChart(self.bubbles[i].center, float(np.sqrt(r))), 0.5 * float(np.log(radius**2 / r))

    def separation(self, k: int) -> float:
        """min over pairs of max{r_i/r_j, r_j/r_i, |p_i − p_j|²/(r_i r_j)}"""
        if not self.summed:
            return float("inf")
        r = self.scale(k)
        centers = [b.center for b in self.bubbles]
        return min(
            abs(a - b) ** 2 / (r * r) for i, a in enumerate(centers) for b in centers[i + 1 :]
        )


# ===== TRANSFER =====


@dataclass(frozen=True)
class TransferPlan:
    """Log cutoffs at the concentration points (δ) and at each bubble's point at ∞ (δ_b)"""

    delta: float = 0.5
    bubble_delta: float = 0.5


@dataclass(eq=False)
class SectionChoice:
    """X₀ along u₀ on the base mesh and Z_i along ω_i on the bubble mesh, ambient vertex values"""

    name: str
    base: Optional[np.ndarray] = None
    bubbles: Tuple[Optional[np.ndarray], ...] = ()

    def bubble(self, i: int) -> Optional[np.ndarray]:
        return self.bubbles[i] if i < len(self.bubbles) else None

    def combine(self, other: "SectionChoice", sign: float = 1.0) -> "SectionChoice":
        def add(a, b):
            if a is None and b is None:
                return None
            if a is None:
                return sign * b
            if b is None:
                return a
            return a + sign * b

        size = max(len(self.bubbles), len(other.bubbles))
        return SectionChoice(
            f"{self.name}{'+' if sign > 0 else '-'}{other.name}",
            add(self.base, other.base),
            tuple(add(self.bubble(i), other.bubble(i)) for i in range(size)),
        )


@dataclass(eq=False)
class TransferredSection:
    """X_k = P(u_k)(η·X₀) + Σ_i (P(u_k)(η_∞·Z_i))∘(m_k^i)⁻¹, evaluated lazily at points"""

    seq: BubbleSequence
    k: int
    plan: TransferPlan
    base_mesh: SurfaceMesh
    bubble_mesh: SurfaceMesh
    choice: SectionChoice

    @property
    def ambient_dim(self) -> int:
        return self.seq.manifold.ambient_dim

    def base_cutoff(self, points: np.ndarray) -> np.ndarray:
        eta = np.ones(len(points))
        for b in self.seq.bubbles:
            eta *= cutoff_profile(geodesic_distance(points, complex_to_sphere(np.array(b.center))), self.plan.delta)
        return eta

    def bubble_cutoff(self, points: np.ndarray) -> np.ndarray:
        return cutoff_profile(geodesic_distance(points, NORTH), self.plan.bubble_delta)

    def base_part(self, points: np.ndarray) -> np.ndarray:
        if self.choice.base is None:
            return np.zeros((len(points), self.ambient_dim))
        return self.base_mesh.interpolate(self.choice.base, points) * self.base_cutoff(points)[:, None]

    def bubble_part(self, i: int, points: np.ndarray) -> np.ndarray:
        Z = self.choice.bubble(i)
        if Z is None:
            return np.zeros((len(points), self.ambient_dim))
        return self.bubble_mesh.interpolate(Z, points) * self.bubble_cutoff(points)[:, None]

    def at(self, points: np.ndarray) -> np.ndarray:
        """Ambient values at base sphere points, before tangent projection"""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        out = self.base_part(points)
        for i in range(len(self.seq.bubbles)):
            out = out + self.bubble_part(i, self.seq.dilation(self.k, i).inverse().apply_sphere(points))
        return out

    def in_chart(self, i: int, points: np.ndarray) -> np.ndarray:
        """X_k∘m_k^i at bubble sphere points"""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        base_points = self.seq.dilation(self.k, i).apply_sphere(points)
        out = self.base_part(base_points) + self.bubble_part(i, points)
        for j in range(len(self.seq.bubbles)):
            if j != i:
                out = out + self.bubble_part(j, self.seq.dilation(self.k, j).inverse().apply_sphere(base_points))
        return out

    def support_radius(self) -> float:
        """Plane radius around p_i outside which every Z_{i,k} vanishes"""
        return self.seq.scale(self.k) / np.tan(0.5 * self.plan.bubble_delta**2)

    def disjoint(self) -> bool:
        radius = self.support_radius()
        centers = [b.center for b in self.seq.bubbles]
        has_bubble = [self.choice.bubble(i) is not None for i in range(len(centers))]
        if self.choice.base is not None:
            ring = np.exp(2j * np.pi * np.arange(64) / 64)
            for i, p in enumerate(centers):
                if not has_bubble[i]:
                    continue
                rim = complex_to_sphere(p + radius * ring)
                if np.max(geodesic_distance(rim, complex_to_sphere(np.array(p)))) >= self.plan.delta**2:
                    return False
        for i, a in enumerate(centers):
            for j in range(i + 1, len(centers)):
                if has_bubble[i] and has_bubble[j] and abs(a - centers[j]) <= 2.0 * radius:
                    return False
        return True


@dataclass(eq=False)
class LimitData:
    """Forms and spectra of u₀ and of every ω_i"""

    limit_forms: AssembledForms
    limit_report: SpectrumReport
    bubble_forms: List[AssembledForms]
    bubble_reports: List[SpectrumReport]

    def totals(self) -> Tuple[int, int, bool]:
        """Ind(u₀) + Nul(u₀) + Σ(Ind + Nul)(ω_i), index part, any ambiguity"""
        reports = [self.limit_report] + self.bubble_reports
        cls = [r.classification for r in reports]
        total = sum(c.index + c.nullity for c in cls)
        index = sum(c.index for c in cls)
        ambiguous = any(c.ambiguous or c.truncated for c in cls)
        return total, index, ambiguous


class BubbleService:
    """Experiments along bubbling sequences"""

    # ===== SEQUENCES =====

    @staticmethod
    def make_sequence(
        family: str = "identity",
        schedule: Optional[Sequence[float]] = None,
        centers: Sequence[complex] = (0.0,),
        manifold: Optional[TargetManifold] = None,
    ) -> BubbleSequence:
        """Bubbling sequence of the family at the given centers and scales"""
        schedule = tuple(float(r) for r in (schedule or DEFAULT_SCHEDULE))
        if not schedule or min(schedule) <= 0:
            raise ConfigError("scale schedule must be non-empty and positive")
        diffs = np.diff(schedule)
        if np.any(diffs > 0):
            raise ConfigError("scale schedule must be non-increasing")
        if len(schedule) > 1 and not np.all(diffs < 0):
            logger.warning("Scale schedule is not strictly decreasing; the sequence is degenerate")
        parsed = MapService.parse_family(family)
        if not isinstance(parsed, RationalFamily) or parsed.is_constant:
            raise ConfigError(f"bubbles must be non-constant rational families, got '{family}'")
        centers = [complex(c) for c in centers]
        if not centers:
            raise ConfigError("at least one bubble center is required")
        if len(centers) > 1:
            if parsed.degree != 1:
                raise ConfigError("several bubbles are glued from degree-one bubbles only")
            parsed = RationalFamily((1.0,), (1.0, 0.0))
        seq = BubbleSequence(
            tuple(Bubble(parsed, c) for c in centers), schedule, manifold or RoundSphere(2)
        )
        if seq.summed:
            worst = min(seq.separation(k) for k in seq.ks)
            if worst < SEPARATION_THRESHOLD:
                logger.warning(f"Bubble separation {worst:.3g} below {SEPARATION_THRESHOLD:g}")
        logger.info(f"Bubble sequence '{family}' with {len(centers)} bubble(s), {len(schedule)} scales")
        return seq

    @staticmethod
    def resolvable(mesh: SurfaceMesh, r: float, center: complex = 0.0) -> bool:
        """Bubble diameter 4r/(1 + |p|²) on the sphere spans at least six mesh cells"""
        return 4.0 * r / (1.0 + abs(center) ** 2) >= RESOLVE_CELLS * mesh.h

    @staticmethod
    def sequence_resolvable(seq: BubbleSequence, k: int, mesh: SurfaceMesh) -> bool:
        return all(BubbleService.resolvable(mesh, seq.scale(k), b.center) for b in seq.bubbles)

    @staticmethod
    def sequence_energies(seq: BubbleSequence, mesh: SurfaceMesh) -> pd.DataFrame:
        """E(u_k) per k against 4π·degree"""
        expected = 4.0 * np.pi * seq.degree

        def row(k: int) -> Dict[str, Any]:
            energy = MapService.dirichlet_energy(seq.realize(k, mesh))
            return {
                "k": k,
                "r_k": seq.scale(k),
                "energy": energy,
                "expected": expected,
                "relative_error": abs(energy - expected) / expected,
                "resolvable": BubbleService.sequence_resolvable(seq, k, mesh),
                "separation": seq.separation(k),
            }

        rows = _map_ordered(row, seq.ks)
        dropped = [r["k"] for r in rows if not r["resolvable"]]
        if dropped:
            logger.warning(f"Scales k={dropped} are not resolved at mesh size {mesh.h:.3g}")
        return pd.DataFrame(rows)

    @staticmethod
    def harmonicity_study(seq: BubbleSequence, k: int, meshes: Sequence[SurfaceMesh]) -> pd.DataFrame:
        """Harmonic residual of u_k under refinement"""
        rows = []
        for mesh in meshes:
            u = seq.realize(k, mesh)
            rows.append({"level": mesh.level, "h": mesh.h, "residual": MapService.harmonic_residual(u)})
        return pd.DataFrame(rows)

    @staticmethod
    def conformal_invariance(
        family: RationalFamily,
        mesh: SurfaceMesh,
        charts: Sequence[Mobius],
        manifold: Optional[TargetManifold] = None,
    ) -> pd.DataFrame:
        """E(u∘m) against E(u) for each chart"""
        reference = MapService.dirichlet_energy(MapService.realize(mesh, family, manifold))
        rows = []
        for chart in charts:
            energy = MapService.dirichlet_energy(MapService.realize(mesh, family.precompose(chart), manifold))
            rows.append(
                {
                    "chart": f"{chart.a:g},{chart.b:g},{chart.c:g},{chart.d:g}",
                    "energy": energy,
                    "reference": reference,
                    "relative_error": abs(energy - reference) / reference,
                }
            )
        return pd.DataFrame(rows)

    # ===== CUTOFFS =====

    @staticmethod
    def log_cutoff(mesh: SurfaceMesh, center: np.ndarray, delta: float) -> np.ndarray:
        """Vertex values of the logarithmic cutoff around a sphere point"""
        if not 0.0 < delta < 1.0:
            raise ResolutionError(f"cutoff radius must lie in (0, 1), got {delta}")
        if delta**2 < mesh.h:
            raise ResolutionError(
                f"inner cutoff radius δ²={delta**2:.3g} is below the mesh size {mesh.h:.3g}",
                {"delta": delta, "h": mesh.h},
            )
        return cutoff_profile(geodesic_distance(mesh.vertices, np.asarray(center, dtype=float)), delta)

    @staticmethod
    def cutoff_energy(mesh: SurfaceMesh, values: np.ndarray) -> float:
        """∫|∇η|²"""
        return float(values @ (mesh.stiffness @ values))

    # ===== LIMIT DATA =====

    @staticmethod
    def spectrum_of(u: MapField, n_eigs: int) -> Tuple[SpectrumReport, AssembledForms]:
        forms = FormsService.assemble(u)
        report = SpectraService.solve(forms.index_form, forms.scalar_product, min(n_eigs, forms.dof - 1))
        SpectraService.classify(report, SpectraService.default_tau(u.mesh.h))
        return report, forms

    @staticmethod
    def limit_data(seq: BubbleSequence, base_mesh: SurfaceMesh, bubble_mesh: SurfaceMesh, n_eigs: int = 12) -> LimitData:
        limit_report, limit_forms = BubbleService.spectrum_of(seq.limit_map(base_mesh), n_eigs)
        pairs = [BubbleService.spectrum_of(seq.bubble_map(i, bubble_mesh), n_eigs) for i in range(len(seq.bubbles))]
        return LimitData(limit_forms, limit_report, [f for _, f in pairs], [r for r, _ in pairs])

    @staticmethod
    def eigen_sections(report: SpectrumReport, forms: AssembledForms, kind: str) -> List[np.ndarray]:
        """Ambient eigen-sections of one class ("negative", "null", "positive")"""
        return [
            forms.basis.to_ambient(report.eigenvectors[:, j])
            for j, cls in enumerate(report.classes())
            if cls == kind
        ]

    @staticmethod
    def standard_choices(seq: BubbleSequence, data: LimitData) -> List[SectionChoice]:
        """null (bubble), positive (limit) and mixed section choices"""
        null = BubbleService.eigen_sections(data.bubble_reports[0], data.bubble_forms[0], "null")
        positive = BubbleService.eigen_sections(data.limit_report, data.limit_forms, "positive")
        pad = (None,) * (len(seq.bubbles) - 1)
        choices = []
        if null:
            choices.append(SectionChoice("null", None, (null[0],) + pad))
        if positive:
            choices.append(SectionChoice("positive", positive[0], (None,) + pad))
        if null and positive:
            choices.append(SectionChoice("mixed", positive[0], (null[0],) + pad))
        if len(choices) < 3:
            logger.warning(f"Only {len(choices)} section choices available")
        return choices

    @staticmethod
    def negative_choices(seq: BubbleSequence, data: LimitData) -> List[SectionChoice]:
        out = [
            SectionChoice(f"limit-neg{j}", X, (None,) * len(seq.bubbles))
            for j, X in enumerate(BubbleService.eigen_sections(data.limit_report, data.limit_forms, "negative"))
        ]
        for i, (report, forms) in enumerate(zip(data.bubble_reports, data.bubble_forms)):
            for j, Z in enumerate(BubbleService.eigen_sections(report, forms, "negative")):
                bubbles = tuple(Z if b == i else None for b in range(len(seq.bubbles)))
                out.append(SectionChoice(f"bubble{i}-neg{j}", None, bubbles))
        return out

    # ===== QUADRATIC FORM EVALUATION =====

    @staticmethod
    def _index_shares(forms: AssembledForms, ambient: np.ndarray) -> np.ndarray:
        x = forms.basis.from_ambient(ambient)
        parts = FormsService.triangle_contributions(forms, x)
        return parts["stiffness"] - parts["curvature"]

    @staticmethod
    def limit_form_value(choice: SectionChoice, plan: TransferPlan, seq: BubbleSequence, data: LimitData) -> float:
        """D²E(u₀)(ηX₀) + Σ D²E(ω_i)(η_∞Z_i)"""
        probe = TransferredSection(seq, 1, plan, data.limit_forms.u.mesh, data.bubble_forms[0].u.mesh, choice)
        total = 0.0
        if choice.base is not None:
            mesh = data.limit_forms.u.mesh
            total += float(np.sum(BubbleService._index_shares(data.limit_forms, probe.base_part(mesh.vertices))))
        for i, forms in enumerate(data.bubble_forms):
            if choice.bubble(i) is not None:
                total += float(np.sum(BubbleService._index_shares(forms, probe.bubble_part(i, forms.u.mesh.vertices))))
        return total

    @staticmethod
    def chart_value(section: TransferredSection, base_forms: AssembledForms, chart_forms: List[AssembledForms]) -> float:
        """
        D²E(u_k)(X_k) split at |z − p_i| = √r_k: the outer part on the base mesh,
        each inner disk pulled back by m_k^i onto the bubble mesh
        """
        seq, k = section.seq, section.k
        seam = np.sqrt(seq.scale(k))
        base_mesh = base_forms.u.mesh
        centroids = _centroid_points(base_mesh)
        outer = np.ones(base_mesh.n_triangles, dtype=bool)
        for b in seq.bubbles:
            outer &= plane_distance(centroids, b.center) >= seam
        total = float(np.sum(BubbleService._index_shares(base_forms, section.at(base_mesh.vertices))[outer]))
        for i, forms in enumerate(chart_forms):
            mesh = forms.u.mesh
            inner = plane_distance(_centroid_points(mesh), 0.0) < 1.0 / seam
            total += float(np.sum(BubbleService._index_shares(forms, section.in_chart(i, mesh.vertices))[inner]))
        return total

    @staticmethod
    def single_value(section: TransferredSection, base_forms: AssembledForms) -> float:
        shares = BubbleService._index_shares(base_forms, section.at(base_forms.u.mesh.vertices))
        return float(np.sum(shares))

    # ===== LOWER BOUND =====

    @staticmethod
    def transfer(
        seq: BubbleSequence,
        k: int,
        choice: SectionChoice,
        plan: TransferPlan,
        base_mesh: SurfaceMesh,
        bubble_mesh: SurfaceMesh,
    ) -> TransferredSection:
        section = TransferredSection(seq, k, plan, base_mesh, bubble_mesh, choice)
        if not section.disjoint():
            logger.warning(f"Transferred supports of '{choice.name}' overlap at k={k}")
        return section

    @staticmethod
    def transferred_vertices(section: TransferredSection, u_k: MapField) -> np.ndarray:
        """X_k at the vertices of u_k's mesh, projected onto T_{u_k}N"""
        P = u_k.manifold.tangent_projection(u_k.values, check=False)
        return np.einsum("vij,vj->vi", P, section.at(u_k.mesh.vertices))

    @staticmethod
    def verify_lower_bound(
        seq: BubbleSequence,
        plan: TransferPlan,
        base_mesh: SurfaceMesh,
        bubble_mesh: SurfaceMesh,
        data: Optional[LimitData] = None,
        choices: Optional[Sequence[SectionChoice]] = None,
        n_eigs: int = 12,
    ) -> Dict[str, Any]:
        """
        Convergence tables D²E(u_k)(X_k) → D²E(u₀)(X₀) + Σ D²E(ω_i)(Z_i) and the
        count of negative directions spanned by transferred negative eigen-sections
        """
        data = data or BubbleService.limit_data(seq, base_mesh, bubble_mesh, n_eigs)
        choices = list(choices) if choices is not None else BubbleService.standard_choices(seq, data)
        negatives = BubbleService.negative_choices(seq, data)
        rhs = {c.name: BubbleService.limit_form_value(c, plan, seq, data) for c in choices}

        def per_k(k: int) -> Dict[str, Any]:
            u_k = seq.realize(k, base_mesh)
            base_forms = FormsService.assemble(u_k)
            chart_forms = [FormsService.assemble(seq.realize_chart(k, i, bubble_mesh)) for i in range(len(seq.bubbles))]
            resolvable = BubbleService.sequence_resolvable(seq, k, base_mesh)
            rows = []
            for choice in choices:
                section = BubbleService.transfer(seq, k, choice, plan, base_mesh, bubble_mesh)
                lhs = BubbleService.chart_value(section, base_forms, chart_forms)
                single = BubbleService.single_value(section, base_forms) if resolvable else None
                rows.append(
                    {
                        "choice": choice.name,
                        "k": k,
                        "r_k": seq.scale(k),
                        "lhs": lhs,
                        "lhs_single": single,
                        "rhs": rhs[choice.name],
                        "gap": abs(lhs - rhs[choice.name]) / (1.0 + abs(rhs[choice.name])),
                        "overlap": not section.disjoint(),
                        "resolvable": resolvable,
                    }
                )
            count = BubbleService._negative_count(seq, k, negatives, plan, base_mesh, bubble_mesh, base_forms, chart_forms)
            return {"rows": rows, "negative_directions": count}

        results = _map_ordered(per_k, seq.ks)
        table = pd.DataFrame([row for r in results for row in r["rows"]])
        verdicts = {}
        for choice in choices:
            rows = table[(table["choice"] == choice.name) & (~table["overlap"])]
            if rows.empty:
                verdicts[choice.name] = {"status": "AMBIGUOUS", "final_gap": None}
                continue
            final = rows.sort_values("k").iloc[-1]
            verdicts[choice.name] = {
                "status": "PASS" if final["gap"] <= TRANSFER_GAP else "FAIL",
                "final_gap": float(final["gap"]),
                "final_k": int(final["k"]),
            }
        _, limit_index, _ = data.totals()
        counts = [r["negative_directions"] for r in results]
        return {
            "table": table,
            "verdicts": verdicts,
            "negative_directions": counts,
            "limit_index": limit_index,
        }

    @staticmethod
    def _negative_count(
        seq: BubbleSequence,
        k: int,
        negatives: Sequence[SectionChoice],
        plan: TransferPlan,
        base_mesh: SurfaceMesh,
        bubble_mesh: SurfaceMesh,
        base_forms: AssembledForms,
        chart_forms: List[AssembledForms],
    ) -> int:
        """Negative eigenvalues of the Gram matrix of D²E(u_k) on the transferred negative sections"""
        n = len(negatives)
        if n == 0:
            return 0

        def value(choice: SectionChoice) -> float:
            section = TransferredSection(seq, k, plan, base_mesh, bubble_mesh, choice)
            return BubbleService.chart_value(section, base_forms, chart_forms)

        gram = np.empty((n, n))
        for a in range(n):
            gram[a, a] = value(negatives[a])
            for b in range(a + 1, n):
                plus = value(negatives[a].combine(negatives[b], 1.0))
                minus = value(negatives[a].combine(negatives[b], -1.0))
                gram[a, b] = gram[b, a] = 0.25 * (plus - minus)
        values = la.eigh(gram, eigvals_only=True)
        return int(np.sum(values < -1e-8 * max(1.0, np.abs(values).max())))

    # ===== UPPER BOUND =====

    @staticmethod
    def verify_upper_bound(
        seq: BubbleSequence,
        meshes: Sequence[SurfaceMesh],
        data: Optional[LimitData] = None,
        n_eigs: int = 12,
    ) -> Dict[str, Any]:
        """
        Ind(u_k) + Nul(u_k) against Ind(u₀) + Nul(u₀) + Σ(Ind + Nul)(ω_i) per
        resolvable k, classified on every mesh; converged when the two finest agree
        """
        finest = meshes[-1]
        data = data or BubbleService.limit_data(seq, finest, finest, n_eigs)
        rhs, _, rhs_ambiguous = data.totals()
        bubble_cls = data.bubble_reports[0].classification

        def per_k(k: int) -> Dict[str, Any]:
            usable = [m for m in meshes if BubbleService.sequence_resolvable(seq, k, m)]
            row: Dict[str, Any] = {"k": k, "r_k": seq.scale(k), "rhs": rhs, "levels": [m.level for m in usable]}
            if not usable:
                row.update({"status": "SKIPPED", "resolvable": False})
                return row
            classes: List[Classification] = []
            for mesh in usable:
                report, _ = BubbleService.spectrum_of(seq.realize(k, mesh), n_eigs)
                classes.append(report.classification)
            last = classes[-1]
            pairs = [(c.index, c.nullity) for c in classes]
            converged = len(pairs) < 2 or pairs[-1] == pairs[-2]
            ambiguous = last.ambiguous or last.truncated or not converged or rhs_ambiguous
            lhs = last.index + last.nullity
            row.update(
                {
                    "resolvable": True,
                    "index": last.index,
                    "nullity": last.nullity,
                    "lhs": lhs,
                    "holds": lhs <= rhs,
                    "converged": converged,
                    "ambiguous": ambiguous,
                    "status": "AMBIGUOUS" if ambiguous else ("PASS" if lhs <= rhs else "FAIL"),
                }
            )
            if not seq.summed:
                row["conformal_match"] = (last.index, last.nullity) == (bubble_cls.index, bubble_cls.nullity)
            return row

        rows = _map_ordered(per_k, seq.ks)
        decided = [r["status"] for r in rows if r["status"] in ("PASS", "FAIL")]
        if not decided:
            status = "AMBIGUOUS"
        else:
            status = "FAIL" if "FAIL" in decided else "PASS"
        return {
            "table": pd.DataFrame(rows),
            "rhs": rhs,
            "limit": data.limit_report.classification.as_dict(),
            "bubbles": [r.classification.as_dict() for r in data.bubble_reports],
            "status": status,
        }

    # ===== ENERGY ACCOUNTING =====

    @staticmethod
    def region_labels(seq: BubbleSequence, k: int, radius: float, points: np.ndarray) -> np.ndarray:
        """0 base, 1 + 2i bubble i, 2 + 2i neck i"""
        labels = np.zeros(len(points), dtype=int)
        r = seq.scale(k)
        for i, b in enumerate(seq.bubbles):
            d = plane_distance(points, b.center)
            labels[(d < radius) & (d > r / radius)] = 2 + 2 * i
            labels[d <= r / radius] = 1 + 2 * i
        return labels

    @staticmethod
    def _region_sums(values: np.ndarray, labels: np.ndarray, count: int) -> Dict[str, float]:
        out = {"base": float(np.sum(values[labels == 0]))}
        for i in range(count):
            out[f"bubble{i}"] = float(np.sum(values[labels == 1 + 2 * i]))
            out[f"neck{i}"] = float(np.sum(values[labels == 2 + 2 * i]))
        return out

    @staticmethod
    def regions_overlap(seq: BubbleSequence, k: int, radius: float) -> bool:
        if seq.scale(k) / radius >= radius:
            return True
        centers = [b.center for b in seq.bubbles]
        return any(abs(a - b) <= 2.0 * radius for i, a in enumerate(centers) for b in centers[i + 1 :])

    @staticmethod
    def neck_section_form(seq: BubbleSequence, k: int, section: TransferredSection, grid: CylinderGrid, chart: NeckChart) -> float:
        """D²E(v)(X) on the neck cylinder, v = u_k∘n"""
        manifold = seq.manifold
        v = MapService.neck_pullback(seq.family_at(k), grid, chart, manifold)
        T, TH = grid.mesh_grid
        points = complex_to_sphere(chart(T, TH)).reshape(-1, 3)
        X = section.at(points).reshape(v.values.shape)
        P = manifold.tangent_projection(v.values, check=False)
        X = np.einsum("...ij,...j->...i", P, X)
        Xt, Xth = grid.d_t(X), grid.d_theta(X)
        vt, vth = v.derivatives()
        A_uu = manifold.second_fundamental_form(v.values, vt, vt, check=False) + manifold.second_fundamental_form(
            v.values, vth, vth, check=False
        )
        A_xx = manifold.second_fundamental_form(v.values, X, X, check=False)
        density = np.sum(Xt**2 + Xth**2, axis=-1) - np.sum(A_uu * A_xx, axis=-1)
        return grid.integrate(density)

    @staticmethod
    def energy_accounting(
        seq: BubbleSequence,
        k: int,
        radius: float,
        base_mesh: SurfaceMesh,
        bubble_mesh: SurfaceMesh,
        sections: Optional[Dict[str, TransferredSection]] = None,
    ) -> Dict[str, Any]:
        """
        E(u_k) and section forms split into base {|z − p| ≥ radius}, bubble
        {|z − p| ≤ r_k/radius} and neck regions, in two views: one exact triangle
        partition of the base mesh, and a chart view with the bubble pulled back
        by m_k and the neck by its cylinder chart
        """
        sections = sections or {}
        count = len(seq.bubbles)
        overlap = BubbleService.regions_overlap(seq, k, radius)
        if overlap:
            logger.warning(f"Regions overlap at k={k}, radius={radius:g}")

        # single mesh
        u_k = seq.realize(k, base_mesh)
        labels = BubbleService.region_labels(seq, k, radius, _centroid_points(base_mesh))
        energies = MapService.triangle_energies(u_k)
        total = float(np.sum(energies))
        single = BubbleService._region_sums(energies, labels, count)
        single_gap = abs(sum(single.values()) - total)
        single_sections = {}
        if sections:
            forms = FormsService.assemble(u_k)
            for name, section in sections.items():
                shares = BubbleService._index_shares(forms, section.at(base_mesh.vertices))
                split = BubbleService._region_sums(shares, labels, count)
                split["total"] = float(np.sum(shares))
                single_sections[name] = split

        # chart view
        chart = {"base": float(np.sum(energies[labels == 0]))}
        chart_sections: Dict[str, Dict[str, float]] = {name: {} for name in sections}
        if sections:
            base_shares = {
                name: BubbleService._index_shares(forms, section.at(base_mesh.vertices)) for name, section in sections.items()
            }
            for name in sections:
                chart_sections[name]["base"] = float(np.sum(base_shares[name][labels == 0]))
        bubble_reference = []
        for i in range(count):
            u_chart = seq.realize_chart(k, i, bubble_mesh)
            inner = plane_distance(_centroid_points(bubble_mesh), 0.0) <= 1.0 / radius
            chart[f"bubble{i}"] = float(np.sum(MapService.triangle_energies(u_chart)[inner]))
            bubble_reference.append(MapService.analytic_energy(seq.bubbles[i].family))
            if sections:
                chart_forms = FormsService.assemble(u_chart)
                for name, section in sections.items():
                    shares = BubbleService._index_shares(chart_forms, section.in_chart(i, bubble_mesh.vertices))
                    chart_sections[name][f"bubble{i}"] = float(np.sum(shares[inner]))
            neck_chart, half_length = seq.neck_chart(k, i, radius)
            if half_length <= 0:
                chart[f"neck{i}"] = 0.0
                for name in sections:
                    chart_sections[name][f"neck{i}"] = 0.0
                continue
            grid = NeckService.grid_for(half_length)
            field_k = MapService.neck_pullback(seq.family_at(k), grid, neck_chart, seq.manifold)
            chart[f"neck{i}"] = MapService.dirichlet_energy(field_k)
            for name, section in sections.items():
                chart_sections[name][f"neck{i}"] = BubbleService.neck_section_form(seq, k, section, grid, neck_chart)
        chart_total = sum(chart.values())
        neck_energy = sum(chart[f"neck{i}"] for i in range(count))
        bubble_energy = sum(chart[f"bubble{i}"] for i in range(count))
        reference = sum(bubble_reference)
        return {
            "k": k,
            "r_k": seq.scale(k),
            "radius": radius,
            "overlap": overlap,
            "single": {"shares": single, "total": total, "partition_gap": single_gap, "sections": single_sections},
            "chart": {"shares": chart, "total": chart_total, "sections": chart_sections},
            "neck_share": neck_energy / chart_total if chart_total > 0 else 0.0,
            "bubble_share_error": abs(bubble_energy - reference) / reference if reference > 0 else 0.0,
            "bubble_reference": reference,
        }

    @staticmethod
    def accounting_frame(report: Dict[str, Any]) -> pd.DataFrame:
        """One row per (view, region) of an energy_accounting report"""
        rows = []
        for view in ("single", "chart"):
            for region, value in report[view]["shares"].items():
                rows.append({"k": report["k"], "radius": report["radius"], "view": view, "region": region, "energy": value})
        return pd.DataFrame(rows)
