"""
Discretized domains: P1 triangulations of the unit sphere and the flat
neck cylinder [−L, L] × T¹
"""

import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from src.config import settings
from src.errors import ConfigError, GeometryError, ResolutionError, ResourceLimitError

logger = logging.getLogger(__name__)

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

ICOSAHEDRON_VERTICES = np.array(
    [
        [-1, _GOLDEN, 0], [1, _GOLDEN, 0], [-1, -_GOLDEN, 0], [1, -_GOLDEN, 0],
        [0, -1, _GOLDEN], [0, 1, _GOLDEN], [0, -1, -_GOLDEN], [0, 1, -_GOLDEN],
        [_GOLDEN, 0, -1], [_GOLDEN, 0, 1], [-_GOLDEN, 0, -1], [-_GOLDEN, 0, 1],
    ],
    dtype=float,
)

ICOSAHEDRON_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Flat-triangle P1 mesh with vertices on the unit sphere"""

    vertices: np.ndarray
    triangles: np.ndarray
    level: int = -1

    # ===== ELEMENT GEOMETRY =====

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (F, 3, 3)"""
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self) -> np.ndarray:
        x0, x1, x2 = self.corners[:, 0], self.corners[:, 1], self.corners[:, 2]
        return np.cross(x1 - x0, x2 - x0)

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """∇φ_i on each triangle, shape (F, 3, 3): [triangle, local vertex, ambient]"""
        x0, x1, x2 = self.corners[:, 0], self.corners[:, 1], self.corners[:, 2]
        scale = 1.0 / (2.0 * self.areas[:, None])
        n = self.normals
        return np.stack(
            [
                np.cross(n, x2 - x1) * scale,
                np.cross(n, x0 - x2) * scale,
                np.cross(n, x1 - x0) * scale,
            ],
            axis=1,
        )

    @cached_property
    def edges(self) -> np.ndarray:
        pairs = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        return np.unique(np.sort(pairs, axis=1), axis=0)

    @cached_property
    def h(self) -> float:
        """Mesh size: longest edge"""
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    # ===== SCALAR P1 OPERATORS =====

    def _assemble(self, local: np.ndarray) -> sp.csr_matrix:
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        matrix = sp.coo_matrix(
            (local.ravel(), (rows, cols)), shape=(self.n_vertices, self.n_vertices)
        ).tocsr()
        matrix.sum_duplicates()
        return matrix

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """K_ij = Σ_T |T| ∇φ_i·∇φ_j"""
        G = self.basis_gradients
        local = np.einsum("fia,fja->fij", G, G) * self.areas[:, None, None]
        return self._assemble(local)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Consistent P1 mass matrix"""
        local = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (self.areas / 12.0)[:, None, None]
        return self._assemble(local)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        return np.bincount(
            self.triangles.ravel(), weights=np.repeat(self.areas / 3.0, 3), minlength=self.n_vertices
        )

    # ===== FIELDS =====

    def _check_field(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_vertices:
            raise GeometryError(
                f"field has {values.shape[0]} rows, mesh has {self.n_vertices} vertices"
            )
        return values

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """
        Per-triangle ambient gradient of a vertex field

        values: (V,) or (V, k) → (F, 3) or (F, k, 3)
        """
        values = self._check_field(values)
        local = values[self.triangles]  # (F, 3) or (F, 3, k)
        if local.ndim == 2:
            return np.einsum("fi,fia->fa", local, self.basis_gradients)
        return np.einsum("fik,fia->fka", local, self.basis_gradients)

    def integrate(self, values: np.ndarray) -> float:
        """Exact integral of the P1 interpolant of a vertex field"""
        values = self._check_field(values)
        return float(np.sum(self.areas * values[self.triangles].mean(axis=1)))

    def triangle_integrals(self, density: np.ndarray) -> np.ndarray:
        """Per-triangle integrals of a piecewise-constant density"""
        density = np.asarray(density, dtype=float)
        if density.shape[0] != self.n_triangles:
            raise GeometryError(
                f"density has {density.shape[0]} rows, mesh has {self.n_triangles} triangles"
            )
        return self.areas * density

    # ===== POINT LOCATION =====

    @cached_property
    def _vertex_star(self) -> np.ndarray:
        """Triangles around each vertex, padded by repetition, shape (V, max degree)"""
        owner = self.triangles.ravel()
        tri = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(owner, kind="stable")
        owner, tri = owner[order], tri[order]
        counts = np.bincount(owner, minlength=self.n_vertices)
        width = int(counts.max())
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(len(owner)) - starts[owner]
        star = np.repeat(tri[starts][:, None], width, axis=1)
        star[owner, slot] = tri
        return star

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.vertices)

    def locate(self, points: np.ndarray, chunk: int = 20_000) -> Tuple[np.ndarray, np.ndarray]:
        """
        Containing triangle and barycentric coordinates of points on S²

        Points are projected radially onto the triangle planes; candidates are
        the stars of the three nearest vertices.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        points = points / np.linalg.norm(points, axis=1, keepdims=True)
        triangles = np.empty(len(points), dtype=np.int64)
        bary = np.empty((len(points), 3))
        for start in range(0, len(points), chunk):
            block = points[start : start + chunk]
            _, nearest = self._tree.query(block, k=3)
            candidates = self._vertex_star[nearest].reshape(len(block), -1)  # (Q, C)
            corners = self.corners[candidates]  # (Q, C, 3, 3)
            n = self.normals[candidates]
            depth = np.einsum("qca,qca->qc", n, corners[:, :, 0])
            along = np.einsum("qca,qa->qc", n, block)
            with np.errstate(divide="ignore", invalid="ignore"):
                y = (depth / along)[..., None] * block[:, None, :]
            weights = np.stack(
                [
                    np.einsum("qca,qca->qc", n, np.cross(corners[:, :, 1] - y, corners[:, :, 2] - y)),
                    np.einsum("qca,qca->qc", n, np.cross(corners[:, :, 2] - y, corners[:, :, 0] - y)),
                    np.einsum("qca,qca->qc", n, np.cross(corners[:, :, 0] - y, corners[:, :, 1] - y)),
                ],
                axis=-1,
            ) / (2.0 * self.areas[candidates])[..., None]
            score = np.where(along > 0, weights.min(axis=-1), -np.inf)
            best = np.argmax(score, axis=1)
            rows = np.arange(len(block))
            chosen = np.clip(weights[rows, best], 0.0, None)
            triangles[start : start + len(block)] = candidates[rows, best]
            bary[start : start + len(block)] = chosen / chosen.sum(axis=1, keepdims=True)
        return triangles, bary

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """P1 interpolant of a vertex field evaluated at points on S²"""
        values = self._check_field(values)
        triangles, bary = self.locate(points)
        local = values[self.triangles[triangles]]  # (Q, 3, ...)
        return np.einsum("qi,qi...->q...", bary, local)


# ===== ICOSPHERE =====


def _subdivide(vertices: np.ndarray, triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pairs = np.sort(
        np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1
    )
    unique, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    midpoints = 0.5 * (vertices[unique[:, 0]] + vertices[unique[:, 1]])
    midpoints /= np.linalg.norm(midpoints, axis=1, keepdims=True)
    base = len(vertices)
    nf = len(triangles)
    ab = base + inverse[:nf]
    bc = base + inverse[nf : 2 * nf]
    ca = base + inverse[2 * nf :]
    a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    refined = np.concatenate(
        [
            np.stack([a, ab, ca], axis=1),
            np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ]
    )
    return np.concatenate([vertices, midpoints]), refined


def _build_icosphere(level: int) -> Tuple[np.ndarray, np.ndarray]:
    vertices = ICOSAHEDRON_VERTICES / np.linalg.norm(ICOSAHEDRON_VERTICES, axis=1, keepdims=True)
    triangles = ICOSAHEDRON_FACES.copy()
    # outward orientation
    x0, x1, x2 = (vertices[triangles[:, i]] for i in range(3))
    flip = np.einsum("fa,fa->f", np.cross(x1 - x0, x2 - x0), x0) < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    for _ in range(level):
        vertices, triangles = _subdivide(vertices, triangles)
    return vertices, triangles


def _cache_path(level: int) -> Path:
    return Path(settings.mesh_cache_dir) / f"icosphere-L{level}.npz"


def _load_cached(level: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    path = _cache_path(level)
    if not path.exists():
        return None
    try:
        with np.load(path) as archive:
            vertices, triangles = archive["vertices"], archive["triangles"]
            stored_level = int(archive["level"])
    except (OSError, KeyError, ValueError) as e:
        logger.warning(f"Ignoring unreadable mesh cache {path}: {e}")
        return None
    if stored_level != level or triangles.shape != (20 * 4**level, 3) or vertices.shape[1] != 3:
        logger.warning(f"Ignoring inconsistent mesh cache {path}")
        return None
    return vertices, triangles


def _store_cached(level: int, vertices: np.ndarray, triangles: np.ndarray) -> None:
    path = _cache_path(level)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
        with os.fdopen(fd, "wb") as handle:
            np.savez(handle, vertices=vertices, triangles=triangles, level=np.array(level))
        os.replace(tmp, path)
    except OSError as e:
        logger.warning(f"Could not write mesh cache {path}: {e}")


def icosphere(level: int, use_cache: Optional[bool] = None) -> SurfaceMesh:
    """Icosahedron refined `level` times by midpoint subdivision, projected to S²"""
    if level < 0:
        raise ConfigError(f"mesh level must be ≥ 0, got {level}")
    if level > settings.max_mesh_level:
        raise ResourceLimitError(
            f"mesh level {level} exceeds limit {settings.max_mesh_level}",
            {"level": level, "max_mesh_level": settings.max_mesh_level},
        )
    use_cache = settings.mesh_cache_enabled if use_cache is None else use_cache
    cached = _load_cached(level) if use_cache else None
    if cached is None:
        vertices, triangles = _build_icosphere(level)
        if use_cache:
            _store_cached(level, vertices, triangles)
    else:
        vertices, triangles = cached
    mesh = SurfaceMesh(vertices=vertices, triangles=triangles, level=level)
    logger.info(f"Icosphere level {level}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return mesh


# ===== NECK CYLINDER =====


@dataclass(frozen=True, eq=False)
class CylinderGrid:
    """
    Tensor grid on [−L, L] × T¹ with the flat product metric

    Axis 0 is t (uniform, endpoints included), axis 1 is θ (n_θ equispaced
    points of the circle of length 2π). Fields may carry trailing axes.
    """

    half_length: float
    n_t: int
    n_theta: int
    t: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.half_length <= 0:
            raise ResolutionError(f"cylinder half length must be positive, got {self.half_length}")
        if self.n_t < 16 or self.n_theta < 8 or self.n_theta % 2:
            raise ResolutionError(
                f"cylinder grid too coarse: n_t={self.n_t} (≥ 16), n_theta={self.n_theta} (≥ 8, even)"
            )
        object.__setattr__(self, "t", np.linspace(-self.half_length, self.half_length, self.n_t))
        object.__setattr__(self, "theta", 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta)

    @property
    def dt(self) -> float:
        return 2.0 * self.half_length / (self.n_t - 1)

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @cached_property
    def mesh_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.t, self.theta, indexing="ij")

    @cached_property
    def t_weights(self) -> np.ndarray:
        w = np.full(self.n_t, self.dt)
        w[[0, -1]] *= 0.5
        return w

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        k = np.fft.fftfreq(self.n_theta, d=1.0 / self.n_theta)
        k[self.n_theta // 2] = 0.0
        return k

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid in t, rectangle (spectrally exact) in θ"""
        return float(np.sum(self.slice_integral(values) * self.t_weights))

    def slice_integral(self, values: np.ndarray) -> np.ndarray:
        """∫_{t}×T¹ values dθ for every grid t"""
        values = np.asarray(values, dtype=float)
        return values.reshape(self.n_t, self.n_theta, -1).sum(axis=(1, 2)) * self.dtheta

    def d_theta(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        shape = (1, self.n_theta) + (1,) * (values.ndim - 2)
        spectrum = np.fft.fft(values, axis=1) * (1j * self.wavenumbers.reshape(shape))
        return np.real(np.fft.ifft(spectrum, axis=1))

    def d_t(self, values: np.ndarray) -> np.ndarray:
        return np.gradient(np.asarray(values, dtype=float), self.dt, axis=0, edge_order=2)

    def dirichlet_energy(self, values: np.ndarray) -> float:
        """½∫(|∂_t v|² + |∂_θ v|²) for scalar or vector-valued fields"""
        return 0.5 * self.integrate(self.gradient_squared(values))

    def gradient_squared(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        dt, dth = self.d_t(values), self.d_theta(values)
        if values.ndim == 2:
            return dt**2 + dth**2
        return np.sum(dt**2 + dth**2, axis=-1)


def cylinder(half_length: float, n_t: int, n_theta: int) -> CylinderGrid:
    return CylinderGrid(half_length=half_length, n_t=n_t, n_theta=n_theta)
