"""
bubble-run: a bubbling sequence, its energies and harmonicity, the
logarithmic cutoffs, both index bounds and the energy accounting
"""

import logging
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from src.errors import ResolutionError
from src.experiments.context import RunContext
from src.geometry.manifold import get_manifold
from src.geometry.mesh import icosphere
from src.schemas import BubbleRunConfig
from src.service.bubble_service import (
    NECK_SHARE,
    BUBBLE_SHARE,
    TRANSFER_GAP,
    BubbleSequence,
    BubbleService,
    LimitData,
    TransferPlan,
)
from src.service.maps_service import complex_to_sphere, parse_complex

logger = logging.getLogger(__name__)

ENERGY_TOLERANCE = 0.02
CUTOFF_SLACK = 1.1
PARTITION_TOLERANCE = 1e-10


def _energies(ctx: RunContext, seq: BubbleSequence, config: BubbleRunConfig) -> None:
    table = BubbleService.sequence_energies(seq, icosphere(config.base_level))
    ctx.table("energies", table)
    resolved = table[table["resolvable"]]
    worst = float(resolved["relative_error"].max()) if not resolved.empty else None
    ctx.at_most("energy_quantization", worst, ENERGY_TOLERANCE, f"{len(resolved)} resolvable scales")
    ctx.results["energies"] = {"expected": float(table["expected"].iloc[0]), "resolvable": resolved["k"].tolist()}


def _harmonicity(ctx: RunContext, seq: BubbleSequence, config: BubbleRunConfig) -> None:
    meshes = [icosphere(level) for level in config.harmonicity_levels]
    table = BubbleService.harmonicity_study(seq, seq.ks[0], meshes)
    ctx.table("harmonicity", table)
    residuals = table["residual"].to_numpy()
    if len(residuals) < 2:
        ctx.check("harmonic_residual_decreasing", None, residuals.tolist(), message="needs two levels")
        return
    ctx.check("harmonic_residual_decreasing", bool(np.all(np.diff(residuals) < 0)), residuals.tolist())


def _cutoffs(ctx: RunContext, seq: BubbleSequence, config: BubbleRunConfig) -> None:
    mesh = icosphere(config.cutoff_level)
    center = complex_to_sphere(np.array(seq.bubbles[0].center))
    rows = []
    for delta in sorted(config.cutoff_deltas, reverse=True):
        bound = 2.0 * np.pi / abs(np.log(delta))
        try:
            eta = BubbleService.log_cutoff(mesh, center, delta)
        except ResolutionError as e:
            logger.warning(f"Cutoff δ={delta:g} skipped: {e.message}")
            rows.append({"delta": delta, "energy": np.nan, "bound": bound, "resolved": False})
            continue
        rows.append({"delta": delta, "energy": BubbleService.cutoff_energy(mesh, eta), "bound": bound, "resolved": True})
    table = pd.DataFrame(rows)
    ctx.table("cutoffs", table)
    resolved = table[table["resolved"]]
    if resolved.empty:
        ctx.check("cutoff_energy_bound", None, message="no cutoff radius is resolved on this mesh")
        return
    ratio = float((resolved["energy"] / resolved["bound"]).max())
    ctx.at_most("cutoff_energy_bound", ratio, CUTOFF_SLACK, "energy relative to 2π/|log δ|")
    energies = resolved["energy"].to_numpy()
    if len(energies) >= 2:
        ctx.check("cutoff_energy_shrinks", bool(np.all(np.diff(energies) < 0)), energies.tolist())


def _lower_bound(ctx: RunContext, seq: BubbleSequence, config: BubbleRunConfig, plan: TransferPlan, data: LimitData) -> None:
    base_mesh, bubble_mesh = icosphere(config.base_level), icosphere(config.bubble_level)
    result = BubbleService.verify_lower_bound(seq, plan, base_mesh, bubble_mesh, data, n_eigs=config.n_eigs)
    ctx.table("lower_bound", result["table"])
    for name, verdict in result["verdicts"].items():
        passed = None if verdict["status"] == "AMBIGUOUS" else verdict["status"] == "PASS"
        ctx.check(f"transfer_convergence[{name}]", passed, verdict["final_gap"], TRANSFER_GAP)
    counts = result["negative_directions"]
    limit_index = result["limit_index"]
    ctx.check("negative_directions_transfer", counts[-1] >= limit_index, counts, limit_index)
    ctx.results["lower_bound"] = {
        "verdicts": result["verdicts"],
        "negative_directions": counts,
        "limit_index": limit_index,
    }


def _upper_bound(ctx: RunContext, seq: BubbleSequence, config: BubbleRunConfig) -> None:
    meshes = [icosphere(level) for level in config.levels]
    result = BubbleService.verify_upper_bound(seq, meshes, n_eigs=config.n_eigs)
    ctx.table("upper_bound", result["table"])
    status = result["status"]
    ctx.check("index_upper_bound", None if status == "AMBIGUOUS" else status == "PASS", result["rhs"])
    ctx.results["upper_bound"] = {key: result[key] for key in ("rhs", "limit", "bubbles", "status")}


def _accounting(ctx: RunContext, seq: BubbleSequence, config: BubbleRunConfig, plan: TransferPlan, data: LimitData) -> None:
    base_mesh, bubble_mesh = icosphere(config.base_level), icosphere(config.bubble_level)
    k = config.accounting_k or seq.ks[-1]
    sections = {
        choice.name: BubbleService.transfer(seq, k, choice, plan, base_mesh, bubble_mesh)
        for choice in BubbleService.standard_choices(seq, data)
    }
    reports = [
        BubbleService.energy_accounting(seq, k, radius, base_mesh, bubble_mesh, sections)
        for radius in sorted(config.radii, reverse=True)
    ]
    ctx.table("accounting", pd.concat([BubbleService.accounting_frame(r) for r in reports], ignore_index=True))
    ctx.json("accounting", reports)

    gap = max(r["single"]["partition_gap"] / max(r["single"]["total"], 1.0) for r in reports)
    ctx.at_most("energy_partition_exact", gap, PARTITION_TOLERANCE)
    smallest = reports[-1]
    if smallest["overlap"]:
        ctx.check("neck_energy_vanishes", None, smallest["neck_share"], NECK_SHARE, "regions overlap")
        ctx.check("bubble_energy_captured", None, smallest["bubble_share_error"], BUBBLE_SHARE, "regions overlap")
    else:
        ctx.at_most("neck_energy_vanishes", smallest["neck_share"], NECK_SHARE)
        ctx.at_most("bubble_energy_captured", smallest["bubble_share_error"], BUBBLE_SHARE)
    shares = [r["neck_share"] for r in reports]
    if len(shares) >= 2:
        ctx.check("neck_share_shrinks_with_radius", bool(np.all(np.diff(shares) <= 0)), shares)
    ctx.results["accounting"] = {"k": k, "radii": [r["radius"] for r in reports], "neck_shares": shares}


def run(config: BubbleRunConfig, ctx: RunContext) -> None:
    manifold = get_manifold(config.manifold)
    centers = [parse_complex(c) for c in config.centers]
    seq = BubbleService.make_sequence(config.family, config.schedule, centers, manifold)
    plan = TransferPlan(config.delta, config.bubble_delta)
    ctx.results["sequence"] = {
        "degree": seq.degree,
        "scales": list(seq.schedule),
        "centers": centers,
        "separation": [seq.separation(k) for k in seq.ks],
    }

    if config.energies:
        _energies(ctx, seq, config)
    if config.harmonicity:
        _harmonicity(ctx, seq, config)
    if config.cutoff:
        _cutoffs(ctx, seq, config)

    data: Optional[LimitData] = None
    if config.lower_bound or config.accounting:
        data = BubbleService.limit_data(seq, icosphere(config.base_level), icosphere(config.bubble_level), config.n_eigs)
        limit: Dict[str, Any] = {
            "limit": data.limit_report.classification.as_dict(),
            "bubbles": [r.classification.as_dict() for r in data.bubble_reports],
        }
        ctx.results["limit_data"] = limit
    if config.lower_bound:
        _lower_bound(ctx, seq, config, plan, data)
    if config.upper_bound:
        _upper_bound(ctx, seq, config)
    if config.accounting:
        _accounting(ctx, seq, config, plan, data)
