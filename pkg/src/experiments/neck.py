"""
neck-test: Poisson solver order, the tangential and L∞ estimates on long
cylinders, gradient decay on bubble necks and the per-slice balance
"""

import logging
from typing import Dict, List

import numpy as np
import pandas as pd

from src.experiments.context import RunContext
from src.schemas import NeckTestConfig
from src.service.neck_service import GRADIENT_RATE, TANGENTIAL_RATE, NeckService

logger = logging.getLogger(__name__)

POISSON_ORDER = 1.8
RECOVERY_TOLERANCE = 1e-10


def _manufactured(t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.sin(t) * np.cos(theta) + t**2


def _manufactured_laplacian(t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return -2.0 * np.sin(t) * np.cos(theta) + 2.0


def _poisson(ctx: RunContext, config: NeckTestConfig) -> None:
    rows = []
    for step in config.poisson_steps:
        grid = NeckService.grid_for(config.poisson_length, step, config.n_theta)
        rows.append(NeckService.manufactured_solution(grid, _manufactured, _manufactured_laplacian))
    table = pd.DataFrame(rows)
    ctx.table("poisson_convergence", table)
    if len(table) >= 2:
        order = NeckService.convergence_order(table["error"].tolist(), table["dt"].tolist())
        ctx.at_least("poisson_order", order, POISSON_ORDER)
        ctx.results["poisson_order"] = order

    grid = NeckService.grid_for(config.poisson_length, config.poisson_steps[-1], config.n_theta)
    recovered = NeckService.manufactured_solution(grid, _manufactured)
    ctx.at_most("poisson_discrete_recovery", recovered["error"], RECOVERY_TOLERANCE)


def _tangential(ctx: RunContext, config: NeckTestConfig) -> None:
    rows: List[Dict] = []
    for L in config.lengths:
        grid = NeckService.grid_for(L, config.dt, config.n_theta)
        T, _ = grid.mesh_grid
        # nonzero boundary mean and a decaying mode, so the L∞ constant is not trivially zero
        boundary = 1.0 + np.cos(grid.theta)
        harmonic = NeckService.poisson_solve(grid, np.zeros_like(T), boundary, boundary)
        f = NeckService.end_sources(grid, config.source_inset)
        phi = harmonic + NeckService.poisson_solve(grid, f)

        pure = NeckService.tangential_estimate_check(grid, harmonic)
        forced = NeckService.tangential_estimate_check(grid, phi, f)
        linfty = NeckService.linfty_check(grid, harmonic, limit=config.linfty_limit)
        forced_linfty = NeckService.linfty_check(grid, phi, f, limit=config.linfty_limit)
        ctx.table(f"tangential_L{L:g}", forced["profile"].to_frame())
        rows.append(
            {
                "half_length": L,
                "harmonic_exponent": pure["decay_exponent"],
                "harmonic_constant": pure["admissible_constant"],
                "forced_constant": forced["admissible_constant"],
                "linfty_constant": linfty["admissible_constant"],
                "forced_linfty_constant": forced_linfty["admissible_constant"],
                "boundary_mean": linfty["boundary_mean"],
                "source_term": forced_linfty["source_term"],
                "sup_norm": forced_linfty["sup_norm"],
            }
        )
        ctx.at_least(f"tangential_decay[L{L:g}]", pure["decay_exponent"], TANGENTIAL_RATE)
        ctx.at_most(f"linfty_bound[L{L:g}]", linfty["admissible_constant"], config.linfty_limit)
        ctx.at_most(f"forced_linfty_bound[L{L:g}]", forced_linfty["admissible_constant"], config.linfty_limit)

    table = pd.DataFrame(rows)
    ctx.table("tangential", table)
    for column in ("harmonic_constant", "forced_constant", "linfty_constant"):
        growth = NeckService.growth(table[column].tolist())
        ctx.at_most(f"{column}_growth", growth, config.growth_limit, "last over first along the length sweep")
    ctx.results["tangential"] = rows


def _no_neck(ctx: RunContext, config: NeckTestConfig) -> None:
    rows: List[Dict] = []
    fields = {}
    for L in config.no_neck_lengths:
        grid = NeckService.grid_for(L, config.dt, config.n_theta)
        fields["one-sided", L] = NeckService.neck_field(*NeckService.one_sided_bubble(L, config.buffer), grid)
        fields["two-sided", L] = NeckService.neck_field(*NeckService.two_sided_bubble(L, config.delta), grid)
    for (kind, L), v in fields.items():
        report = NeckService.no_neck_decay_check(v, config.epsilon_threshold)
        balance = NeckService.slice_balance_check(v, config.balance_tolerance)
        ctx.table(f"no_neck_{kind}_L{L:g}", report["profile"].to_frame())
        rows.append(
            {
                "kind": kind,
                "half_length": L,
                "applicable": report["applicable"],
                "window_energy": report["window_energy"],
                "admissible_constant": report["admissible_constant"],
                "decay_exponent": report["decay_exponent"],
                "oscillation": report["oscillation"],
                "relative_imbalance": balance["relative_imbalance"],
            }
        )
        name = f"{kind}[L{L:g}]"
        if report["passed"] is None:
            ctx.check(f"no_neck_decay_{name}", None, message=report["reason"])
        elif not report["applicable"]:
            ctx.check(f"no_neck_decay_{name}", None, report["window_energy"], config.epsilon_threshold, "ε-regularity fails")
        else:
            ctx.at_least(f"no_neck_decay_{name}", report["decay_exponent"], GRADIENT_RATE)
        ctx.at_most(f"slice_balance_{name}", balance["relative_imbalance"], config.balance_tolerance)

    table = pd.DataFrame(rows)
    ctx.table("no_neck", table)
    for kind, group in table.groupby("kind"):
        oscillation = group.sort_values("half_length")["oscillation"].to_numpy()
        ctx.check(f"oscillation_shrinks[{kind}]", bool(np.all(np.diff(oscillation) < 0)), oscillation.tolist())

    grid = NeckService.grid_for(config.no_neck_lengths[0], config.dt, config.n_theta)
    skewed = NeckService.slice_balance_check(NeckService.non_conformal_field(grid, config.non_conformal_tilt))
    ctx.check(
        "slice_imbalance_detected",
        skewed["relative_imbalance"] > config.balance_tolerance,
        skewed["relative_imbalance"],
        config.balance_tolerance,
        "non-conformal field",
    )
    ctx.results["no_neck"] = rows


def run(config: NeckTestConfig, ctx: RunContext) -> None:
    logger.info(f"Neck tests on lengths {config.lengths} and {config.no_neck_lengths}")
    _poisson(ctx, config)
    _tangential(ctx, config)
    _no_neck(ctx, config)
