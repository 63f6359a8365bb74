"""
sylvester-test: (index, nullity) of a symmetric form do not depend on the
SPD scalar product, on planted random problems and on assembled index forms
"""

import logging

import numpy as np
import pandas as pd

from src.experiments.context import RunContext
from src.geometry.manifold import get_manifold
from src.geometry.mesh import icosphere
from src.schemas import SylvesterTestConfig
from src.service.forms_service import FormsService
from src.service.maps_service import MapService
from src.service.spectra_service import SpectraService

logger = logging.getLogger(__name__)

EIGENVALUE_TOLERANCE = 1e-10


def _random_trials(ctx: RunContext, config: SylvesterTestConfig) -> None:
    rng = ctx.rng
    rows = []
    for trial in range(config.trials):
        n = int(rng.integers(config.min_dim, config.max_dim + 1))
        negative = int(rng.integers(0, n + 1))
        null = int(rng.integers(0, n - negative + 1))
        positive = n - negative - null
        A = SpectraService.planted(negative, null, positive, rng)
        B1 = SpectraService.random_spd(n, rng, config.condition)
        B2 = SpectraService.random_spd(n, rng, config.condition)
        result = SpectraService.inertia_invariance(A, B1, B2)
        first, second = result["first"], result["second"]
        rows.append(
            {
                "trial": trial,
                "dim": n,
                "planted_index": negative,
                "planted_nullity": null,
                "index_b1": first["index"],
                "nullity_b1": first["nullity"],
                "index_b2": second["index"],
                "nullity_b2": second["nullity"],
                "agree": result["agree"],
                "matches_planted": (first["index"], first["nullity"]) == (negative, null),
            }
        )
    table = pd.DataFrame(rows)
    ctx.table("random_trials", table)
    ctx.check("random_inertia_agree", bool(table["agree"].all()), int(table["agree"].sum()), len(table))
    ctx.check(
        "random_inertia_planted", bool(table["matches_planted"].all()), int(table["matches_planted"].sum()), len(table)
    )


def _diagonal_examples(ctx: RunContext) -> None:
    A = np.diag([-1.0, 0.0, 2.0])
    report = SpectraService.solve(A, np.diag([4.0, 1.0, 1.0]), 3, method="dense")
    error = float(np.max(np.abs(report.eigenvalues - np.array([-0.25, 0.0, 2.0]))))
    ctx.at_most("diagonal_generalized_eigenvalues", error, EIGENVALUE_TOLERANCE)

    A = np.diag([-3.0, -1.0, 0.0, 0.0, 5.0])
    result = SpectraService.inertia_invariance(A, np.eye(5), SpectraService.random_spd(5, ctx.rng))
    pairs = [(result[key]["index"], result[key]["nullity"]) for key in ("first", "second")]
    ctx.check("diagonal_inertia", result["agree"] and pairs[0] == (2, 2), pairs, [2, 2])


def _assembled_forms(ctx: RunContext, config: SylvesterTestConfig) -> None:
    manifold = get_manifold(config.pde_manifold)
    rows = []
    for family in config.pde_families:
        for level in config.pde_levels:
            mesh = icosphere(level)
            forms = FormsService.assemble(MapService.from_spec(mesh, family, manifold))
            result = SpectraService.inertia_invariance(
                forms.index_form, forms.scalar_product, forms.mass, SpectraService.default_tau(mesh.h)
            )
            rows.append(
                {
                    "family": family,
                    "level": level,
                    "dof": forms.dof,
                    "index_b": result["first"]["index"],
                    "nullity_b": result["first"]["nullity"],
                    "index_m0": result["second"]["index"],
                    "nullity_m0": result["second"]["nullity"],
                    "scale_max": result["scale_bounds"][1],
                    "agree": result["agree"],
                }
            )
            ctx.check(
                f"assembled_inertia[{family},L{level}]",
                result["agree"],
                [result["first"]["index"], result["first"]["nullity"]],
                [result["second"]["index"], result["second"]["nullity"]],
            )
    if rows:
        ctx.table("assembled_forms", pd.DataFrame(rows))


def run(config: SylvesterTestConfig, ctx: RunContext) -> None:
    logger.info(f"Inertia invariance on {config.trials} random problems")
    _random_trials(ctx, config)
    _diagonal_examples(ctx)
    _assembled_forms(ctx, config)
