"""
spectrum: index and nullity of one map under refinement, with the a priori
bounds, inertia, finite-difference and general-form cross-checks
"""

import logging
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from src.config import settings
from src.experiments.context import RunContext
from src.geometry.manifold import get_manifold
from src.geometry.mesh import icosphere
from src.schemas import SpectrumConfig
from src.service.bubble_service import BubbleService
from src.service.forms_service import FormsService, dirichlet_functional, parse_two_form
from src.service.maps_service import MapField, MapService, RationalFamily, parse_chart
from src.service.spectra_service import SpectraService

logger = logging.getLogger(__name__)

FD_RELATIVE = 1e-5
FD_ABSOLUTE = 1e-8
BOUND_TOLERANCE = 1e-8
REDUCTION_TOLERANCE = 1e-6
LINEARITY_TOLERANCE = 1e-3
CONFORMAL_TOLERANCE = 0.02
NULL_DECAY = 2.0
NULL_SEPARATION = 10.0
EXACT_NULL = 1e-8


def _levels(config: SpectrumConfig) -> List[int]:
    if not config.refinement_study:
        return [config.mesh.level]
    return sorted(set(config.mesh.refinement_levels) | {config.mesh.level})


def _spectrum_at(ctx: RunContext, config: SpectrumConfig, level: int) -> Dict[str, Any]:
    manifold = get_manifold(config.manifold)
    mesh = icosphere(level)
    u = MapService.from_spec(mesh, config.family, manifold)
    forms = FormsService.assemble(u, config.curvature_rule)
    k = min(config.k, forms.dof - 2 if config.method != "dense" else forms.dof)
    report = SpectraService.solve(forms.index_form, forms.scalar_product, k, config.method)
    tau = config.tau or SpectraService.default_tau(mesh.h)
    classification = SpectraService.classify(report, tau)
    apriori = SpectraService.apriori_check(report, forms)

    ctx.table(f"spectrum_L{level}", pd.DataFrame(report.table()))
    if config.export_matrices:
        for which in ("stiffness", "mass", "curvature", "index", "scalar"):
            ctx.triplets(f"matrices_L{level}/{which}", forms.matrix(which))

    ctx.at_least(f"lambda_lower_bound[L{level}]", apriori["min_lambda_plus_one"], -BOUND_TOLERANCE)
    ctx.at_most(f"w12_bound[L{level}]", apriori["max_w12_excess"], BOUND_TOLERANCE)
    ctx.at_most(f"apriori_identity[L{level}]", apriori["identity_residual"], BOUND_TOLERANCE)
    ctx.at_most(f"b_orthonormality[L{level}]", report.orthonormality_error, BOUND_TOLERANCE)
    ctx.at_most(f"solver_residual[L{level}]", float(report.residuals.max()), BOUND_TOLERANCE)

    inertia = None
    if config.inertia_check:
        # above the dense limit only the lowest k pairs are compared
        inertia_k = None if forms.dof <= settings.dense_dof_limit else k
        inertia = SpectraService.inertia_invariance(forms.index_form, forms.scalar_product, forms.mass, tau, inertia_k)
        ctx.check(
            f"inertia_invariance[L{level}]",
            inertia["agree"],
            [inertia["first"]["index"], inertia["first"]["nullity"]],
            [inertia["second"]["index"], inertia["second"]["nullity"]],
            inertia["solver"] if inertia["agree"] is not None else "lowest pairs all below τ",
        )

    return {
        "level": level,
        "h": mesh.h,
        "dof": forms.dof,
        "tau": tau,
        "report": report.summary(),
        "classification": classification.as_dict(),
        "inertia": inertia,
        "abs_eigenvalues": np.sort(np.abs(report.eigenvalues)),
    }


def _refinement_checks(ctx: RunContext, config: SpectrumConfig, runs: List[Dict[str, Any]]) -> None:
    finest = runs[-1]["classification"]
    pairs = [(r["classification"]["index"], r["classification"]["nullity"]) for r in runs]
    if len(runs) >= 2:
        stable = pairs[-1] == pairs[-2]
        ctx.check("classification_converged", True if stable else None, pairs[-1], pairs[-2])
    if config.expected_index is not None:
        ctx.check("index", all(p[0] == config.expected_index for p in pairs), [p[0] for p in pairs], config.expected_index)
    if config.expected_nullity is not None:
        n = config.expected_nullity
        if finest["ambiguous"] or finest["truncated"]:
            ctx.check("nullity", None, finest["nullity"], n, "finest classification ambiguous")
        else:
            ctx.check("nullity", finest["nullity"] == n, finest["nullity"], n)
        if n > 0 and len(runs) >= 2 and all(len(r["abs_eigenvalues"]) > n for r in runs):
            cluster = [float(r["abs_eigenvalues"][n - 1]) for r in runs]
            gaps = [float(r["abs_eigenvalues"][n]) for r in runs]
            if max(cluster) <= EXACT_NULL:
                # null sections of the discrete form itself
                ctx.at_most("null_cluster_exact", max(cluster), EXACT_NULL)
            else:
                decay = min(a / max(b, 1e-300) for a, b in zip(cluster, cluster[1:]))
                ctx.at_least("null_cluster_decay", decay, NULL_DECAY)
            ctx.at_least("null_cluster_separation", min(gaps) / max(cluster[-1], EXACT_NULL), NULL_SEPARATION)


def _oracle_checks(ctx: RunContext, config: SpectrumConfig) -> Dict[str, Any]:
    manifold = get_manifold(config.manifold)
    u = MapService.from_spec(icosphere(config.oracle_level), config.family, manifold)
    forms = FormsService.assemble(u, "weak")
    energy = dirichlet_functional(u)
    rows = []
    for j in range(config.oracle_sections):
        x = ctx.rng.standard_normal(forms.dof)
        X = forms.basis.to_ambient(x)
        scale = float(np.max(np.linalg.norm(X, axis=1)))
        x, X = x / scale, X / scale
        assembled = FormsService.cross_form(forms, x, x)
        w12 = FormsService.cross_form(forms, x, x, "stiffness") + FormsService.cross_form(forms, x, x, "mass")
        fd = FormsService.fd_second_variation(energy, u, X)
        rows.append(
            {
                "section": j,
                "assembled": assembled,
                "finite_difference": fd["value"],
                "richardson_gap": fd["richardson_gap"],
                "error": abs(fd["value"] - assembled),
                "allowed": max(FD_RELATIVE * abs(assembled), FD_ABSOLUTE * w12),
            }
        )
    table = pd.DataFrame(rows)
    if rows:
        ctx.table("fd_oracle", table)
        worst = float((table["error"] / table["allowed"]).max())
        ctx.at_most("fd_oracle_agreement", worst, 1.0, "error relative to the allowed deviation")
    return {"level": config.oracle_level, "sections": len(rows)}


def _general_form_checks(ctx: RunContext, config: SpectrumConfig) -> Dict[str, Any]:
    manifold = get_manifold(config.manifold)
    mesh = icosphere(config.general_level)
    u = MapService.from_spec(mesh, config.family, manifold)
    dirichlet = FormsService.assemble(u)
    zero = FormsService.assemble_general(u, parse_two_form("zero"))
    scale = float(np.abs(dirichlet.index_form).max())
    reduction = float(np.abs(zero.index_form - dirichlet.index_form).max()) / scale
    ctx.at_most("general_form_reduces_at_zero", reduction, REDUCTION_TOLERANCE)

    constant = MapService.from_spec(mesh, "constant", manifold)
    deviation = FormsService.assemble_general(constant, parse_two_form("calibration:1"))
    stiffness = float(np.abs(deviation.stiffness).max())
    ctx.at_most(
        "general_form_constant_deviation",
        float(np.abs(deviation.extra).max()) / stiffness,
        REDUCTION_TOLERANCE,
    )

    out: Dict[str, Any] = {"level": config.general_level, "reduction": reduction}
    if len(config.general_strengths) >= 2:
        # tangential part of a fixed ambient direction
        x = dirichlet.basis.from_ambient(np.tile(np.eye(manifold.ambient_dim)[0], (mesh.n_vertices, 1)))
        values = []
        for H in config.general_strengths:
            forms = FormsService.assemble_general(u, parse_two_form(f"calibration:{H!r}"))
            values.append(FormsService.cross_form(forms, x, x))
        slope, intercept = np.polyfit(config.general_strengths, values, 1)
        fitted = slope * np.asarray(config.general_strengths) + intercept
        misfit = float(np.max(np.abs(fitted - values))) / max(1.0, float(np.max(np.abs(values))))
        ctx.at_most("general_form_linear_in_strength", misfit, LINEARITY_TOLERANCE)
        out["strength_response"] = {"strengths": config.general_strengths, "values": values, "slope": slope}

    form = parse_two_form(config.two_form)
    if not form.is_zero:
        forms = FormsService.assemble_general(u, form)
        growth = []
        for _ in range(max(1, config.oracle_sections)):
            growth.append(FormsService.growth_report(forms, ctx.rng.standard_normal(forms.dof)))
        frame = pd.DataFrame(growth)
        ctx.table("general_form_growth", frame)
        constants = frame["growth_constant"].to_numpy()
        ctx.check("general_form_growth_bounded", bool(np.all(np.isfinite(constants))), float(constants.max()))
        out["growth_constant_max"] = float(constants.max())
    return out


def _conformal_checks(ctx: RunContext, config: SpectrumConfig, u: MapField) -> None:
    if not isinstance(u.family, RationalFamily) or not config.conformal_charts:
        return
    charts = [parse_chart(text) for text in config.conformal_charts]
    table = BubbleService.conformal_invariance(u.family, u.mesh, charts, u.manifold)
    ctx.table("conformal_invariance", table)
    ctx.at_most("conformal_invariance", float(table["relative_error"].max()), CONFORMAL_TOLERANCE)


def run(config: SpectrumConfig, ctx: RunContext) -> None:
    levels = _levels(config)
    logger.info(f"Spectrum of '{config.family}' into {config.manifold} at levels {levels}")
    runs = [_spectrum_at(ctx, config, level) for level in levels]
    _refinement_checks(ctx, config, runs)

    main = next(r for r in runs if r["level"] == config.mesh.level)
    ctx.results["spectrum"] = {key: main[key] for key in ("level", "h", "dof", "tau", "report", "classification")}
    ctx.results["refinement"] = [
        {"level": r["level"], "h": r["h"], "dof": r["dof"], **r["classification"]} for r in runs
    ]
    ctx.table(
        "refinement",
        pd.DataFrame(
            [
                {
                    "level": r["level"],
                    "h": r["h"],
                    "dof": r["dof"],
                    "tau": r["tau"],
                    "index": r["classification"]["index"],
                    "nullity": r["classification"]["nullity"],
                    "ambiguous": r["classification"]["ambiguous"],
                }
                for r in runs
            ]
        ),
    )

    if config.oracle_sections > 0:
        ctx.results["fd_oracle"] = _oracle_checks(ctx, config)
    if config.general_strengths or config.two_form != "zero":
        ctx.results["general_form"] = _general_form_checks(ctx, config)
    u = MapService.from_spec(icosphere(config.mesh.level), config.family, get_manifold(config.manifold))
    _conformal_checks(ctx, config, u)
