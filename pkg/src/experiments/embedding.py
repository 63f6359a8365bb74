"""
embedding-test: projector identities, the curvature pairing of the plain
and augmented embeddings, and isometry of the augmentation
"""

import logging

import numpy as np
import pandas as pd

from src.errors import GeometryError
from src.experiments.context import RunContext
from src.geometry.manifold import AugmentedEmbedding, CliffordTorus, TargetManifold, augment, get_manifold, pullback_metric_defect
from src.geometry.mesh import icosphere
from src.schemas import EmbeddingTestConfig
from src.service.maps_service import MapService

logger = logging.getLogger(__name__)

PROJECTOR_POINTS = 1000
PROJECTOR_TOLERANCE = 1e-10
PAIRING_TOLERANCE = 1e-12
ENERGY_TOLERANCE = 1e-12

# a non-constant map into each base target
_TEST_FAMILIES = {"sphere2": "identity", "clifford": "torus-test"}


def _projector_checks(ctx: RunContext, manifold: TargetManifold) -> None:
    p = manifold.random_points(PROJECTOR_POINTS, ctx.rng)
    P = manifold.tangent_projection(p)
    idempotency = float(np.max(np.abs(P @ P - P)))
    symmetry = float(np.max(np.abs(P - np.swapaxes(P, -1, -2))))
    rank = float(np.max(np.abs(np.trace(P, axis1=-2, axis2=-1) - manifold.dim)))
    ctx.at_most(f"projector_idempotent[{manifold.name}]", idempotency, PROJECTOR_TOLERANCE)
    ctx.at_most(f"projector_symmetric[{manifold.name}]", symmetry, PROJECTOR_TOLERANCE)
    ctx.at_most(f"projector_rank[{manifold.name}]", rank, PROJECTOR_TOLERANCE)


def _clifford_degeneracy(ctx: RunContext) -> None:
    torus = CliffordTorus()
    p, v, w = torus.orthogonal_circle_pair()
    pairing = float(np.dot(torus.second_fundamental_form(p, v, v), torus.second_fundamental_form(p, w, w)))
    ctx.at_most("clifford_pairing_vanishes", abs(pairing), PAIRING_TOLERANCE)
    term = float(np.dot(torus.curvature_term(p, v[None, :], w), w))
    ctx.at_most("clifford_curvature_term_vanishes", abs(term), PAIRING_TOLERANCE)
    ctx.results["clifford_pairing"] = {"pairing": pairing, "curvature_term": term}


def _energy_isometry(ctx: RunContext, embedding: AugmentedEmbedding, level: int) -> None:
    """Lifted per-triangle gradients Di(u)·∇u carry the same energy as ∇u"""
    base = embedding.base
    u = MapService.from_spec(icosphere(level), _TEST_FAMILIES[base.name], base)
    grad = u.gradient()
    anchor = u.values[u.mesh.triangles[:, 0]]
    lifted = np.einsum("fia,fak->fik", embedding.jacobian(anchor), grad)
    areas = u.mesh.areas
    energy = 0.5 * float(np.sum(np.sum(grad**2, axis=(1, 2)) * areas))
    lifted_energy = 0.5 * float(np.sum(np.sum(lifted**2, axis=(1, 2)) * areas))
    ctx.at_most(f"energy_isometry[{embedding.name}]", abs(lifted_energy - energy) / energy, ENERGY_TOLERANCE)


def run(config: EmbeddingTestConfig, ctx: RunContext) -> None:
    _clifford_degeneracy(ctx)
    rows = []
    for key in config.manifolds:
        base = get_manifold(key)
        _projector_checks(ctx, base)
        bounds = base.pairing_bounds()
        for lam in sorted(set(config.lambda_sweep) | {config.lam}):
            try:
                embedding = augment(base, lam, config.samples, config.seed)
            except GeometryError as e:
                rows.append({"manifold": key, "lambda": lam, "measured_c": e.detail.get("measured_c"), "floor": None})
                ctx.check(f"augmented_positive[{key},{lam:g}]", False, e.detail.get("measured_c"), 0.0, e.message)
                continue
            c = embedding.positivity_constant
            floor = embedding.analytic_gain() + (bounds[0] if bounds else 0.0)
            rows.append({"manifold": key, "lambda": lam, "measured_c": c, "floor": floor})
            ctx.check(f"augmented_positive[{key},{lam:g}]", c > 0, c, 0.0)
            ctx.at_least(f"augmented_floor[{key},{lam:g}]", c, floor - PROJECTOR_TOLERANCE)
            if lam != config.lam:
                continue
            ctx.at_least(f"augmented_constant[{key}]", c, config.min_constant)
            defect = pullback_metric_defect(embedding, config.samples, ctx.rng)
            ctx.at_most(f"pullback_metric[{key}]", defect, config.isometry_tolerance)
            _projector_checks(ctx, embedding)
            _energy_isometry(ctx, embedding, config.energy_level)
        if bounds is not None:
            logger.info(f"{key}: analytic pairing bounds {bounds}")
    ctx.table("augmentation", pd.DataFrame(rows))
    ctx.results["augmentation"] = rows
