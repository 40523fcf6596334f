"""Per-block driver tying counts, pilots, and the two candidate banks.

One ``step`` per arriving block: update counts, refresh the plug-in
bandwidth, absorb the block into the mean bank, extract the curve, center
the block's own measurements against it, and repeat on the covariance
side with the residual products.  Raw data never outlives the call.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .bandwidth import (DEFAULT_TRIM, NU_FLOOR, THETA_FLOOR, PilotState,
                        online_bandwidth)
from .kernels import (DEFAULT_RIDGE_SCALE, Block, GridSpec, Stats2D,
                      build_pairs, make_kernel, mean_substats,
                      pair_design_sums)
from .stream import (CandidateBank, CountLedger, CurveEstimate,
                     SurfaceEstimate, extract_curve, extract_surface)

#: Candidate-sequence decay exponents of the two main smoothers, 1/(d+4).
MEAN_EXPONENT = 1.0 / 5.0
COV_EXPONENT = 1.0 / 6.0


@dataclass
class FitConfig:
    """Everything the streaming fit needs besides the data itself.

    ``fixed_h_mu`` / ``fixed_h_gamma`` pin the bandwidths externally and
    bypass the pilot machinery; with L=1 this makes the online estimates
    identical to the pooled batch fit.
    """

    L: int = 5
    J_mean: int = 0  # 0 means: match L
    J_cov: int = 3
    kernel: str = "epanechnikov"
    curve_points: int = 101
    surface_points: int = 51
    lo: float = 0.0
    hi: float = 1.0
    design_mode: str = "sparse"
    freeze_after: int = 200
    G: float | None = None
    R: float | None = None
    theta_floor: float = THETA_FLOOR
    nu_floor: float = NU_FLOOR
    trim: float = DEFAULT_TRIM
    presmooth_scale: float = 0.2
    ridge_scale: float = DEFAULT_RIDGE_SCALE
    fixed_h_mu: float | None = None
    fixed_h_gamma: float | None = None

    def curve_grid(self) -> GridSpec:
        return GridSpec(self.lo, self.hi, self.curve_points)

    def surface_grid(self) -> GridSpec:
        return GridSpec(self.lo, self.hi, self.surface_points)


class OnlineEstimator:
    """Streaming mean and covariance estimator with L candidate slots."""

    def __init__(self, config: FitConfig | None = None):
        self.config = config or FitConfig()
        c = self.config
        if c.L < 1:
            raise ValueError("need at least one candidate slot")
        self.kernel = make_kernel(c.kernel)
        self.curve_grid = c.curve_grid()
        self.surface_grid = c.surface_grid()
        self.ledger = CountLedger()
        self.mean_bank = CandidateBank(1, c.L, MEAN_EXPONENT, self.curve_grid, dim=2)
        self.cov_bank = CandidateBank(2, c.L, COV_EXPONENT, self.surface_grid, dim=3)
        self.pilots = PilotState(
            self.kernel, self.curve_grid, self.surface_grid,
            J_mean=c.J_mean or c.L, J_cov=c.J_cov, design_mode=c.design_mode,
            G=c.G, R=c.R, freeze_after=c.freeze_after,
            theta_floor=c.theta_floor, nu_floor=c.nu_floor, trim=c.trim,
            presmooth_scale=c.presmooth_scale, ridge_scale=c.ridge_scale)
        self.h_mu: float | None = None
        self.h_gamma: float | None = None
        self.last_curve: CurveEstimate | None = None
        self.last_surface: SurfaceEstimate | None = None
        self.last_residuals: list[np.ndarray] | None = None

    @property
    def blocks_seen(self) -> int:
        return self.ledger.blocks

    def _check_domain(self, block: Block) -> None:
        lo, hi = self.curve_grid.lo, self.curve_grid.hi
        for subj in block.subjects:
            if subj.times.min() < lo or subj.times.max() > hi:
                raise ValueError(
                    f"block {block.block_id}: measurement time outside [{lo}, {hi}]")

    def step(self, block: Block) -> tuple[CurveEstimate, SurfaceEstimate | None]:
        """Absorb one block; returns the refreshed curve and surface.

        The surface return is the previous one (or None) for blocks
        without any measurement pair.
        """
        c = self.config
        self._check_domain(block)
        self.ledger.update(block)
        s1_block = int(self.ledger.last_counts[0])
        s2_block = int(self.ledger.last_counts[1])

        if c.fixed_h_mu is not None:
            h_mu = c.fixed_h_mu
        else:
            self.pilots.update_theta_mu(block, self.ledger)
            if c.design_mode == "dense":
                self.pilots.update_sigma2_dense(block, self.ledger)
            self.pilots.update_nu_mu(block, self.ledger, self.h_mu)
            h_mu = online_bandwidth(self.pilots.theta_mu, self.pilots.nu_mu,
                                    self.ledger.s1, 1, self.kernel.alpha,
                                    self.curve_grid)
        grid, kern = self.curve_grid, self.kernel
        self.mean_bank.absorb_block(
            h_mu, s1_block, lambda eta: mean_substats(block, eta, grid, kern))
        self.h_mu = h_mu
        curve = extract_curve(self.mean_bank, c.ridge_scale)
        self.last_curve = curve

        residuals = [s.values - curve.evaluate(s.times) for s in block.subjects]
        self.last_residuals = residuals

        if s2_block > 0:
            pairs = build_pairs(block, residuals)
            if c.fixed_h_gamma is not None:
                h_gamma = c.fixed_h_gamma
            else:
                self.pilots.update_cov_pilots(block, residuals, self.ledger,
                                              pairs=pairs)
                h_gamma = online_bandwidth(self.pilots.theta_gamma,
                                           self.pilots.nu_gamma,
                                           self.ledger.s2, 2, self.kernel.alpha,
                                           self.surface_grid)
            t1, t2, cc = pairs
            pts = self.surface_grid.points
            self.cov_bank.absorb_block(
                h_gamma, s2_block,
                lambda eta: Stats2D(*pair_design_sums(t1, t2, cc, eta, pts, pts, kern)))
            self.h_gamma = h_gamma
            self.last_surface = extract_surface(self.cov_bank, c.ridge_scale)
        return curve, self.last_surface

    # -- persistence ---------------------------------------------------------

    def state_dict(self) -> dict:
        """Complete resumable state; size does not depend on blocks seen."""
        return {
            "config": asdict(self.config),
            "ledger": {
                "blocks": self.ledger.blocks,
                "n_subjects": self.ledger.n_subjects,
                "totals": self.ledger.totals,
                "last_counts": self.ledger.last_counts,
                "last_subjects": self.ledger.last_subjects,
            },
            "mean_bank": self.mean_bank.state_dict(),
            "cov_bank": self.cov_bank.state_dict(),
            "pilots": self.pilots.state_dict(),
            "h_mu": _optional_to_float(self.h_mu),
            "h_gamma": _optional_to_float(self.h_gamma),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "OnlineEstimator":
        est = cls(FitConfig(**state["config"]))
        led = state["ledger"]
        est.ledger.blocks = int(led["blocks"])
        est.ledger.n_subjects = int(led["n_subjects"])
        est.ledger.totals = np.asarray(led["totals"], dtype=np.int64).copy()
        est.ledger.last_counts = np.asarray(led["last_counts"], dtype=np.int64).copy()
        est.ledger.last_subjects = int(led["last_subjects"])
        est.mean_bank.load_state(state["mean_bank"])
        est.cov_bank.load_state(state["cov_bank"])
        est.pilots.load_state(state["pilots"])
        est.h_mu = _float_to_optional(state["h_mu"])
        est.h_gamma = _float_to_optional(state["h_gamma"])
        if est.mean_bank.blocks_absorbed > 0:
            est.last_curve = extract_curve(est.mean_bank, est.config.ridge_scale)
        if est.cov_bank.blocks_absorbed > 0:
            est.last_surface = extract_surface(est.cov_bank, est.config.ridge_scale)
        return est


def _optional_to_float(v: float | None) -> float:
    return float("nan") if v is None else float(v)


def _float_to_optional(v: float) -> float | None:
    v = float(v)
    return None if math.isnan(v) else v
