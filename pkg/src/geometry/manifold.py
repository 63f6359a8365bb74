"""
Embedded target manifolds N ⊂ R^m

Points, tangent vectors and normal vectors are plain numpy arrays whose last
axis is the ambient coordinate; every method broadcasts over leading axes.
"""

import logging
import math
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np

from src.errors import ConfigError, GeometryError

logger = logging.getLogger(__name__)

FD_SFF_STEP = 1e-4


class TargetManifold(ABC):
    """Closed submanifold N ⊂ R^m given by its nearest-point projection"""

    name: str = "manifold"
    dim: int = 0
    ambient_dim: int = 0
    tolerance: float = 1e-10
    reach: float = 0.5

    # ===== PRIMITIVES =====

    @abstractmethod
    def closest_point(self, x: np.ndarray) -> np.ndarray:
        """Nearest-point projection R^m → N"""

    @abstractmethod
    def _projection(self, p: np.ndarray) -> np.ndarray:
        """Tangent projector P(p) without input checks, shape (..., m, m)"""

    def _sff(self, p: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        return fd_second_fundamental_form(self, p, v, w)

    def pairing_bounds(self) -> Optional[Tuple[float, float]]:
        """Analytic (inf, sup) of ⟨A(v,v),A(w,w)⟩ over unit tangent pairs, if known"""
        return None

    # ===== CHECKED OPERATIONS =====

    def check_on_manifold(self, p: np.ndarray) -> None:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise GeometryError(
                f"{self.name}: expected points in R^{self.ambient_dim}, got shape {p.shape}"
            )
        offset = np.linalg.norm(self.closest_point(p) - p, axis=-1)
        worst = float(np.max(offset)) if offset.size else 0.0
        if worst > self.tolerance:
            logger.error(f"{self.name}: point off manifold by {worst:.3e}")
            raise GeometryError(
                f"point off manifold {self.name} by {worst:.3e}",
                {"offset": worst, "tolerance": self.tolerance},
            )

    def check_tangent(self, p: np.ndarray, *vectors: np.ndarray) -> None:
        P = self._projection(p)
        for v in vectors:
            v = np.asarray(v, dtype=float)
            normal = v - np.einsum("...ij,...j->...i", P, v)
            scale = max(1.0, float(np.max(np.abs(v))) if v.size else 0.0)
            worst = float(np.max(np.linalg.norm(normal, axis=-1))) if v.size else 0.0
            if worst > self.tolerance * scale:
                raise GeometryError(
                    f"vector not tangent to {self.name} (normal part {worst:.3e})",
                    {"normal_part": worst},
                )

    def tangent_projection(self, p: np.ndarray, check: bool = True) -> np.ndarray:
        """Orthogonal projector onto T_pN"""
        p = np.asarray(p, dtype=float)
        if check:
            self.check_on_manifold(p)
        return self._projection(p)

    def second_fundamental_form(self, p: np.ndarray, v: np.ndarray, w: np.ndarray, check: bool = True) -> np.ndarray:
        """A_p(v, w), a normal vector, symmetric and bilinear in (v, w)"""
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        if check:
            self.check_on_manifold(p)
            self.check_tangent(p, v, w)
        return self._sff(p, v, w)

    def tangent_frame(self, p: np.ndarray) -> np.ndarray:
        """
        Deterministic orthonormal basis of T_pN, shape (..., n, m)

        Canonical basis vectors are projected onto T_pN, the n longest are kept
        (ties broken by index) and orthonormalized in that order.
        """
        p = np.asarray(p, dtype=float)
        P = self._projection(p)
        lead = P.shape[:-2]
        P = P.reshape(-1, self.ambient_dim, self.ambient_dim)
        norms = np.linalg.norm(P, axis=1)  # column norms = |P e_k|
        order = np.argsort(-np.round(norms, 12), axis=1, kind="stable")[:, : self.dim]
        cols = np.take_along_axis(P, order[:, None, :], axis=2)  # (N, m, n)
        frame = np.empty((P.shape[0], self.dim, self.ambient_dim))
        for a in range(self.dim):
            vec = cols[:, :, a].copy()
            for b in range(a):
                vec -= np.einsum("ij,ij->i", vec, frame[:, b])[:, None] * frame[:, b]
            length = np.linalg.norm(vec, axis=1)
            if np.any(length < 1e-8):
                raise GeometryError(f"degenerate tangent frame on {self.name}")
            frame[:, a] = vec / length[:, None]
        return frame.reshape(lead + (self.dim, self.ambient_dim))

    def curvature_term(self, p: np.ndarray, grad_u: np.ndarray, X: np.ndarray, check: bool = True) -> np.ndarray:
        """
        A²(X) with ⟨A²(X), Y⟩ = Σ_i ⟨A(∂_i u, ∂_i u), A(X, Y)⟩ for tangent Y

        grad_u has shape (..., k, m): the k partial derivatives of u at p.
        """
        p = np.asarray(p, dtype=float)
        grad_u = np.asarray(grad_u, dtype=float)
        X = np.asarray(X, dtype=float)
        if check:
            self.check_on_manifold(p)
            self.check_tangent(p[..., None, :], grad_u)
            self.check_tangent(p, X)
        pk = np.broadcast_to(p[..., None, :], grad_u.shape)
        H = self._sff(pk, grad_u, grad_u).sum(axis=-2)
        frame = self.tangent_frame(p)
        Xn = np.broadcast_to(X[..., None, :], frame.shape)
        pn = np.broadcast_to(p[..., None, :], frame.shape)
        coeff = np.einsum("...m,...am->...a", H, self._sff(pn, Xn, frame))
        return np.einsum("...a,...am->...m", coeff, frame)

    def random_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return self.closest_point(rng.standard_normal((count, self.ambient_dim)))

    def random_unit_tangents(self, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        P = self._projection(p)
        v = np.einsum("...ij,...j->...i", P, rng.standard_normal(p.shape))
        return v / np.linalg.norm(v, axis=-1, keepdims=True)


def fd_second_fundamental_form(
    manifold: TargetManifold,
    p: np.ndarray,
    v: np.ndarray,
    w: np.ndarray,
    step: float = FD_SFF_STEP,
) -> np.ndarray:
    """
    Second fundamental form from central second differences of the
    nearest-point projection, polarized for mixed arguments
    """

    def accel(d: np.ndarray) -> np.ndarray:
        size = np.linalg.norm(d, axis=-1, keepdims=True)
        unit = np.divide(d, size, out=np.zeros_like(d), where=size > 0)
        second = (
            manifold.closest_point(p + step * unit)
            - 2.0 * p
            + manifold.closest_point(p - step * unit)
        ) / step**2
        return second * size**2

    p, v, w = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float), np.asarray(w, float))
    raw = 0.25 * (accel(v + w) - accel(v - w))
    P = manifold._projection(p)
    return raw - np.einsum("...ij,...j->...i", P, raw)


# ===== CONCRETE TARGETS =====


class RoundSphere(TargetManifold):
    """Unit sphere S^n ⊂ R^{n+1}, A_p(v, w) = −⟨v, w⟩ p"""

    def __init__(self, dim: int = 2):
        self.dim = dim
        self.ambient_dim = dim + 1
        self.name = f"sphere{dim}"
        self.reach = 1.0

    def closest_point(self, x):
        x = np.asarray(x, dtype=float)
        size = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(size == 0):
            raise GeometryError("nearest-point projection undefined at the origin")
        return x / size

    def _projection(self, p):
        p = np.asarray(p, dtype=float)
        return np.eye(self.ambient_dim) - p[..., :, None] * p[..., None, :]

    def _sff(self, p, v, w):
        return -np.sum(v * w, axis=-1, keepdims=True) * p

    def pairing_bounds(self):
        return (1.0, 1.0)


class CliffordTorus(TargetManifold):
    """S¹(1/√2) × S¹(1/√2) ⊂ R⁴"""

    radius = 1.0 / math.sqrt(2.0)

    def __init__(self):
        self.dim = 2
        self.ambient_dim = 4
        self.name = "clifford"
        self.reach = self.radius

    def _normals(self, p):
        p = np.asarray(p, dtype=float)
        nu1 = np.zeros_like(p)
        nu2 = np.zeros_like(p)
        nu1[..., :2] = p[..., :2] / self.radius
        nu2[..., 2:] = p[..., 2:] / self.radius
        return nu1, nu2

    def closest_point(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for block in (slice(0, 2), slice(2, 4)):
            size = np.linalg.norm(x[..., block], axis=-1, keepdims=True)
            if np.any(size == 0):
                raise GeometryError("nearest-point projection undefined on the torus axes")
            out[..., block] = self.radius * x[..., block] / size
        return out

    def _projection(self, p):
        nu1, nu2 = self._normals(p)
        return (
            np.eye(4)
            - nu1[..., :, None] * nu1[..., None, :]
            - nu2[..., :, None] * nu2[..., None, :]
        )

    def _sff(self, p, v, w):
        nu1, nu2 = self._normals(p)
        first = np.sum(v[..., :2] * w[..., :2], axis=-1, keepdims=True)
        second = np.sum(v[..., 2:] * w[..., 2:], axis=-1, keepdims=True)
        return -(first * nu1 + second * nu2) / self.radius

    def pairing_bounds(self):
        return (0.0, 1.0 / self.radius**2)

    def orthogonal_circle_pair(self, angle_a: float = 0.0, angle_b: float = 0.0):
        """A point with unit tangents along the two circles: ⟨A(v,v),A(w,w)⟩ = 0 there"""
        r = self.radius
        p = np.array([r * math.cos(angle_a), r * math.sin(angle_a), r * math.cos(angle_b), r * math.sin(angle_b)])
        v = np.array([-math.sin(angle_a), math.cos(angle_a), 0.0, 0.0])
        w = np.array([0.0, 0.0, -math.sin(angle_b), math.cos(angle_b)])
        return p, v, w


# ===== EMBEDDING AUGMENTATION =====


def balanced_directions(m: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Unit directions d and weights c_d with Σ c_d d dᵀ = I

    Coordinate axes (weight a) and the diagonals (e_i ± e_j)/√2 (weight b), with
    a = max(0, b(4 − m)/2). Then Σ c_d ⟨d,v⟩²⟨d,w⟩² ≥ (b/2)|v|²|w|².
    """
    if m == 1:
        return np.ones((1, 1)), np.ones(1), 0.0
    if m <= 4:
        b = 2.0 / (m + 2)
        a = (4.0 - m) / (m + 2)
    else:
        b = 1.0 / (m - 1)
        a = 0.0
    directions, weights = [], []
    if a > 0:
        for k in range(m):
            e = np.zeros(m)
            e[k] = 1.0
            directions.append(e)
            weights.append(a)
    for i in range(m):
        for j in range(i + 1, m):
            for sign in (1.0, -1.0):
                d = np.zeros(m)
                d[i] = 1.0 / math.sqrt(2.0)
                d[j] = sign / math.sqrt(2.0)
                directions.append(d)
                weights.append(b)
    return np.array(directions), np.array(weights), b


class AugmentedEmbedding(TargetManifold):
    """
    i = (1/√2)(j, F_λ∘j) for a base embedding j: N → R^m

    F_λ(x) = ((√c_d/λ) cos λ⟨d,x⟩, (√c_d/λ) sin λ⟨d,x⟩)_d over the balanced
    direction set; F_λ*δ = δ, so i is isometric to j. Ambient layout is
    (base coordinates | cos/sin interleaved per direction).
    """

    def __init__(self, base: TargetManifold, lam: float):
        if lam < 1.0:
            raise GeometryError(f"augmentation needs λ ≥ 1, got {lam}")
        self.base = base
        self.lam = float(lam)
        self.directions, self.weights, self._b = balanced_directions(base.ambient_dim)
        self.dim = base.dim
        self.ambient_dim = base.ambient_dim + 2 * len(self.weights)
        self.name = f"{base.name}+aug:{self.lam:g}"
        self.reach = base.reach / (2.0 * self.lam)
        self.positivity_constant: Optional[float] = None

    # ----- the immersion and its derivatives -----

    def _phases(self, x):
        return self.lam * np.einsum("...m,dm->...d", x, self.directions)

    def immerse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        phase = self._phases(x)
        amp = np.sqrt(self.weights) / self.lam
        block = np.stack([amp * np.cos(phase), amp * np.sin(phase)], axis=-1)
        F = block.reshape(x.shape[:-1] + (2 * len(self.weights),))
        return np.concatenate([x, F], axis=-1) / math.sqrt(2.0)

    def base_point(self, y: np.ndarray) -> np.ndarray:
        return math.sqrt(2.0) * np.asarray(y, dtype=float)[..., : self.base.ambient_dim]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Di(x), shape (..., M, m), with Diᵀ Di = I"""
        x = np.asarray(x, dtype=float)
        m = self.base.ambient_dim
        phase = self._phases(x)
        amp = np.sqrt(self.weights)
        rows = np.stack([-amp * np.sin(phase), amp * np.cos(phase)], axis=-1)  # (..., q, 2)
        DF = rows[..., :, :, None] * self.directions[:, None, :]  # (..., q, 2, m)
        DF = DF.reshape(x.shape[:-1] + (2 * len(self.weights), m))
        eye = np.broadcast_to(np.eye(m), x.shape[:-1] + (m, m))
        return np.concatenate([eye, DF], axis=-2) / math.sqrt(2.0)

    # ----- TargetManifold interface -----

    def closest_point(self, y):
        return self.immerse(self.base.closest_point(self.base_point(y)))

    def _projection(self, y):
        x = self.base_point(y)
        J = self.jacobian(x)
        Pb = self.base._projection(x)
        return np.einsum("...ia,...ab,...jb->...ij", J, Pb, J)

    def _sff(self, y, V, W):
        y, V, W = np.broadcast_arrays(np.asarray(y, float), np.asarray(V, float), np.asarray(W, float))
        x = self.base_point(y)
        J = self.jacobian(x)
        v = np.einsum("...ia,...i->...a", J, V)
        w = np.einsum("...ia,...i->...a", J, W)
        Aj = self.base._sff(x, v, w)
        phase = self._phases(x)
        amp = np.sqrt(self.weights)
        dv = np.einsum("...m,dm->...d", v, self.directions)
        dw = np.einsum("...m,dm->...d", w, self.directions)
        dA = np.einsum("...m,dm->...d", Aj, self.directions)
        hess = -self.lam * amp * dv * dw
        cos, sin = np.cos(phase), np.sin(phase)
        top = np.stack([hess * cos, hess * sin], axis=-1)
        push = np.stack([-amp * sin * dA, amp * cos * dA], axis=-1)
        F = (top + push).reshape(x.shape[:-1] + (2 * len(self.weights),))
        return np.concatenate([Aj, F], axis=-1) / math.sqrt(2.0)

    def pairing_bounds(self):
        base = self.base.pairing_bounds()
        if base is None:
            return None
        return (base[0] + self.analytic_gain(), None)

    def analytic_gain(self) -> float:
        """Guaranteed increase λ²b/4 of ⟨A(v,v),A(w,w)⟩ for unit v, w"""
        return self.lam**2 * self._b / 4.0

    def lift_tangent(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("...ia,...a->...i", self.jacobian(x), v)


# ===== SAMPLING DIAGNOSTICS =====


def sample_pairing(manifold: TargetManifold, samples: int, rng: np.random.Generator) -> Dict[str, float]:
    """
    Extremes of ⟨A_p(v,v), A_p(w,w)⟩ over random points and unit tangent pairs
    """
    p = manifold.random_points(samples, rng)
    v = manifold.random_unit_tangents(p, rng)
    w = manifold.random_unit_tangents(p, rng)
    values = np.sum(manifold._sff(p, v, v) * manifold._sff(p, w, w), axis=-1)
    return {
        "samples": int(samples),
        "min": float(values.min()),
        "max": float(values.max()),
        "sup_abs": float(np.abs(values).max()),
    }


def augment(manifold: TargetManifold, lam: float, samples: int = 10_000, seed: int = 0) -> AugmentedEmbedding:
    """Build the augmented embedding and measure its positivity constant"""
    embedding = AugmentedEmbedding(manifold, lam)
    rng = np.random.default_rng(seed)
    measured = sample_pairing(embedding, samples, rng)
    c = measured["min"]
    logger.info(f"Augmented {manifold.name} with λ={lam:g}: sampled c={c:.4f}, floor={embedding.analytic_gain():.4f}")
    if c <= 0:
        deficit = -c
        logger.error(f"Augmentation of {manifold.name} with λ={lam:g} not positive (deficit {deficit:.3e})")
        raise GeometryError(
            f"λ={lam:g} too small to dominate the second fundamental form of {manifold.name}",
            {"measured_c": c, "deficit": deficit},
        )
    embedding.positivity_constant = c
    return embedding


def pullback_metric_defect(embedding: AugmentedEmbedding, samples: int, rng: np.random.Generator) -> float:
    """max | |Di v|² − |v|² | / |v|² over random base points and tangents"""
    x = embedding.base.random_points(samples, rng)
    v = embedding.base.random_unit_tangents(x, rng) * rng.uniform(0.5, 2.0, size=(samples, 1))
    lifted = embedding.lift_tangent(x, v)
    base_sq = np.sum(v * v, axis=-1)
    return float(np.max(np.abs(np.sum(lifted * lifted, axis=-1) - base_sq) / base_sq))


# ===== REGISTRY =====

# The balanced augmentation has floor inf⟨A⟩ + λ²b/4. On the Clifford torus b = 1/3, so
# c ≥ 1 needs λ ≥ √12; λ = 2 only reaches 1/3. The immersion adds two coordinates per
# balanced direction.
DEFAULT_AUGMENTATION_LAMBDA = 4.0

_BASES = {
    "sphere2": lambda: RoundSphere(2),
    "clifford": CliffordTorus,
}


@lru_cache(maxsize=None)
def get_manifold(key: str) -> TargetManifold:
    """
    Resolve "sphere2", "clifford", "<base>+aug" or "<base>+aug:λ"
    """
    base_key, _, suffix = key.partition("+")
    if base_key not in _BASES:
        raise ConfigError(f"unknown manifold key '{key}'", {"known": sorted(_BASES)})
    base = _BASES[base_key]()
    if not suffix:
        return base
    kind, _, value = suffix.partition(":")
    if kind != "aug":
        raise ConfigError(f"unknown manifold modifier '{suffix}' in '{key}'")
    try:
        lam = float(value) if value else DEFAULT_AUGMENTATION_LAMBDA
    except ValueError:
        raise ConfigError(f"invalid augmentation parameter '{value}' in '{key}'")
    return augment(base, lam)
