"""Full-data reference estimators.

The batch fit pools every block and smooths once.  Bandwidths come from
the same pilot code as the streaming path, run as a single pass with a
one-candidate bank, so the two selectors differ only in what data they
have seen, never in constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bandwidth import PilotState, online_bandwidth
from .engine import FitConfig
from .errors import ShapeMismatch
from .kernels import (Block, cov_substats, make_kernel, mean_substats,
                      solve_grid)
from .stream import (CountLedger, CurveEstimate, SurfaceEstimate,
                     fill_gaps_1d, fill_gaps_2d)


@dataclass
class BatchResult:
    curve: CurveEstimate
    surface: SurfaceEstimate | None
    h_mu: float
    h_gamma: float | None


def merge_blocks(blocks: Sequence[Block]) -> Block:
    """Pool all subjects into one block; order is irrelevant downstream."""
    if not blocks:
        raise ShapeMismatch("need at least one block")
    subjects = [s for b in blocks for s in b.subjects]
    return Block(block_id=blocks[-1].block_id, subjects=subjects)


def _pooled_pilots(merged: Block, config: FitConfig) -> tuple[PilotState, CountLedger]:
    kernel = make_kernel(config.kernel)
    pilots = PilotState(
        kernel, config.curve_grid(), config.surface_grid(),
        J_mean=1, J_cov=1, design_mode=config.design_mode,
        G=config.G, R=config.R, freeze_after=0,
        theta_floor=config.theta_floor, nu_floor=config.nu_floor,
        trim=config.trim, presmooth_scale=config.presmooth_scale,
        ridge_scale=config.ridge_scale)
    ledger = CountLedger().update(merged)
    return pilots, ledger


def batch_fit(blocks: Sequence[Block], config: FitConfig | None = None,
              h_mu: float | None = None, h_gamma: float | None = None,
              residuals: Sequence[Sequence[np.ndarray]] | None = None
              ) -> BatchResult:
    """Pooled mean and covariance fit with plug-in or pinned bandwidths.

    ``residuals``, one list of per-subject arrays per block, overrides the
    centering step; by default measurements are centered at the pooled
    mean fit.  Passing the residual stream an online run produced makes
    the covariance sides of the two methods exactly comparable.
    """
    config = config or FitConfig()
    kernel = make_kernel(config.kernel)
    curve_grid = config.curve_grid()
    surface_grid = config.surface_grid()
    merged = merge_blocks(blocks)
    pilots, ledger = _pooled_pilots(merged, config)

    if h_mu is None:
        pilots.update_theta_mu(merged, ledger)
        if config.design_mode == "dense":
            pilots.update_sigma2_dense(merged, ledger)
        pilots.update_nu_mu(merged, ledger, None)
        h_mu = online_bandwidth(pilots.theta_mu, pilots.nu_mu, ledger.s1, 1,
                                kernel.alpha, curve_grid)
    stats = mean_substats(merged, h_mu, curve_grid, kernel)
    coeffs, valid = solve_grid(stats.p, stats.q, config.ridge_scale)
    values = fill_gaps_1d(coeffs[:, 0], valid, curve_grid.points)
    curve = CurveEstimate(curve_grid, values, h_mu, len(blocks))

    if residuals is None:
        resid_flat = [s.values - curve.evaluate(s.times) for s in merged.subjects]
    else:
        if len(residuals) != len(blocks):
            raise ShapeMismatch("need one residual list per block")
        resid_flat = [np.asarray(r, dtype=float)
                      for block_res in residuals for r in block_res]

    surface = None
    if ledger.s2 > 0:
        if h_gamma is None:
            pilots.update_cov_pilots(merged, resid_flat, ledger)
            h_gamma = online_bandwidth(pilots.theta_gamma, pilots.nu_gamma,
                                       ledger.s2, 2, kernel.alpha, surface_grid)
        stats2 = cov_substats(merged, resid_flat, h_gamma, surface_grid, kernel)
        coeffs2, valid2 = solve_grid(stats2.p, stats2.q, config.ridge_scale)
        vals2 = fill_gaps_2d(coeffs2[..., 0], valid2, surface_grid.points)
        vals2 = 0.5 * (vals2 + vals2.T)
        surface = SurfaceEstimate(surface_grid, vals2, h_gamma, len(blocks))
    return BatchResult(curve, surface, h_mu, h_gamma)


def batch_mean(blocks: Sequence[Block], h: float | None = None,
               config: FitConfig | None = None) -> CurveEstimate:
    """Pooled mean fit; h=None selects the batch plug-in bandwidth."""
    config = config or FitConfig()
    kernel = make_kernel(config.kernel)
    curve_grid = config.curve_grid()
    merged = merge_blocks(blocks)
    if h is None:
        pilots, ledger = _pooled_pilots(merged, config)
        pilots.update_theta_mu(merged, ledger)
        if config.design_mode == "dense":
            pilots.update_sigma2_dense(merged, ledger)
        pilots.update_nu_mu(merged, ledger, None)
        h = online_bandwidth(pilots.theta_mu, pilots.nu_mu, ledger.s1, 1,
                             kernel.alpha, curve_grid)
    stats = mean_substats(merged, h, curve_grid, kernel)
    coeffs, valid = solve_grid(stats.p, stats.q, config.ridge_scale)
    values = fill_gaps_1d(coeffs[:, 0], valid, curve_grid.points)
    return CurveEstimate(curve_grid, values, h, len(blocks))


def batch_cov(blocks: Sequence[Block], h: float | None = None,
              config: FitConfig | None = None,
              residuals: Sequence[Sequence[np.ndarray]] | None = None
              ) -> SurfaceEstimate:
    """Pooled covariance fit; see batch_fit for the residual override."""
    result = batch_fit(blocks, config, h_mu=None, h_gamma=h, residuals=residuals)
    if result.surface is None:
        raise ShapeMismatch("no subject carries a measurement pair")
    return result.surface
