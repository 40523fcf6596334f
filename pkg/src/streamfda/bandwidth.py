"""Plug-in bandwidth selection.

The optimal bandwidth for a d-dimensional local-linear smoother is

    h = (nu / (alpha(W)^2 * theta))^(1/(d+4)) * S^(-1/(d+4)),

where theta is a curvature functional of the target function, nu a
variance functional, and S the relevant observation count.  This module
estimates theta and nu online: every pilot quantity is itself a small
candidate-bank smoother, so the whole selector shares the main
estimator's never-look-back property.  It also provides the closed-form
lower bound on the efficiency lost to running with L candidate slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllDegenerate
from .kernels import (DEFAULT_RIDGE_SCALE, Block, GridSpec, Kernel, Stats2D,
                      build_pairs, cubic_substats, mean_substats,
                      pair_design_sums, response_substats)
from .stream import (CandidateBank, CountLedger, candidate_sequence,
                     extract_surface, fill_gaps_1d, fill_gaps_2d)

#: Rate exponents of the four pilot bandwidths.
PILOT_EXPONENTS = {
    "theta_mu": 1.0 / 7.0,
    "nu_mu": 1.0 / 5.0,
    "theta_gamma": 1.0 / 8.0,
    "nu_gamma": 1.0 / 6.0,
}

#: Lower limits for the pilot functionals; flat or noiseless data would
#: otherwise send the plug-in rule to 0 or infinity.
THETA_FLOOR = 1e-4
NU_FLOOR = 1e-4

#: Fraction of the domain trimmed from each side before integrating
#: pilot functionals (interior-point theory; boundary bias excluded).
DEFAULT_TRIM = 0.05


@dataclass(frozen=True)
class PilotBandwidths:
    theta_mu: float
    nu_mu: float
    theta_gamma: float
    nu_gamma: float


def pilot_bandwidths(s1: int, s2: int, G: float | None = None,
                     R: float | None = None) -> PilotBandwidths:
    """Pilot smoothing rates from the running observation counts.

    ``G`` scales the curvature pilots and ``R`` the variance pilots;
    left unset they default to 0.5^(1/d) with d = 1 for the curve
    pilots and d = 2 for the surface pilots.
    """
    if s1 < 1 or s2 < 1:
        raise ValueError("pilot bandwidths need positive observation counts")
    g_mu = 0.5 if G is None else float(G)
    r_mu = 0.5 if R is None else float(R)
    g_ga = 0.5**0.5 if G is None else float(G)
    r_ga = 0.5**0.5 if R is None else float(R)
    return PilotBandwidths(
        theta_mu=g_mu * float(s1) ** -PILOT_EXPONENTS["theta_mu"],
        nu_mu=r_mu * float(s1) ** -PILOT_EXPONENTS["nu_mu"],
        theta_gamma=g_ga * float(s2) ** -PILOT_EXPONENTS["theta_gamma"],
        nu_gamma=r_ga * float(s2) ** -PILOT_EXPONENTS["nu_gamma"],
    )


def pilot_candidates(h: float, J: int, kind: str) -> np.ndarray:
    """Decreasing candidate sequence for one pilot smoother."""
    if kind not in PILOT_EXPONENTS:
        raise ValueError(f"unknown pilot kind {kind!r}")
    return candidate_sequence(h, J, PILOT_EXPONENTS[kind])


def online_bandwidth(theta: float, nu: float, S: int, d: int, alpha: float,
                     grid: GridSpec | None = None) -> float:
    """The plug-in rule, optionally clamped to the grid's usable range."""
    if theta <= 0 or nu <= 0:
        raise ValueError("pilot functionals must be positive")
    if S < 1:
        raise ValueError("need a positive observation count")
    e = 1.0 / (d + 4)
    h = (nu / (alpha * alpha * theta)) ** e * float(S) ** -e
    if grid is not None:
        h = min(max(h, 2.0 * grid.spacing), 0.5 * grid.width)
    return float(h)


@dataclass(frozen=True)
class BoundConstants:
    """Coefficients of 1/L and 1/L^2 in the efficiency-bound denominator."""

    d: int
    c_lin: float
    c_quad: float


BOUND_CONSTANTS = {
    1: BoundConstants(d=1, c_lin=0.1831, c_quad=0.0032),
    2: BoundConstants(d=2, c_lin=0.2422, c_quad=0.0190),
}


def efficiency_lower_bound(L: int, d: int) -> float:
    """Worst-case relative efficiency of the L-slot online estimator."""
    if L < 1:
        raise ValueError("need at least one candidate slot")
    if d not in BOUND_CONSTANTS:
        raise ValueError("d must be 1 (curves) or 2 (surfaces)")
    c = BOUND_CONSTANTS[d]
    return 1.0 / (1.0 + c.c_lin / L + c.c_quad / (L * L))


def trim_mask(grid: GridSpec, trim: float) -> np.ndarray:
    """Grid points at least trim * width away from both endpoints."""
    delta = trim * grid.width
    eps = 1e-9 * grid.width
    pts = grid.points
    return (pts >= grid.lo + delta - eps) & (pts <= grid.hi - delta + eps)


def integrate_curve(values: np.ndarray, grid: GridSpec,
                    trim: float = DEFAULT_TRIM) -> float:
    keep = trim_mask(grid, trim)
    return float(np.trapezoid(values[keep], grid.points[keep]))


def integrate_surface(values: np.ndarray, grid: GridSpec,
                      trim: float = DEFAULT_TRIM) -> float:
    keep = trim_mask(grid, trim)
    pts = grid.points[keep]
    inner = np.trapezoid(values[np.ix_(keep, keep)], pts, axis=1)
    return float(np.trapezoid(inner, pts))


def _laplacian(values: np.ndarray, spacing: float) -> np.ndarray:
    """Sum of second differences along both axes; edges replicate inward.

    Only the trimmed interior is ever integrated, so the edge rows never
    contribute to the curvature functional.
    """
    lap = np.zeros_like(values)
    inv = 1.0 / (spacing * spacing)
    lap[1:-1, :] += (values[2:, :] - 2.0 * values[1:-1, :] + values[:-2, :]) * inv
    lap[:, 1:-1] += (values[:, 2:] - 2.0 * values[:, 1:-1] + values[:, :-2]) * inv
    lap[0, :] = lap[1, :]
    lap[-1, :] = lap[-2, :]
    lap[:, 0] = lap[:, 1]
    lap[:, -1] = lap[:, -2]
    return lap


def _subject_presmooth(t: np.ndarray, y: np.ndarray, h: float,
                       kernel: Kernel) -> tuple[float, float]:
    """Noise sum of squares from a local-linear self-fit of one record.

    Returns the squared norm of the de-meaned residuals together with
    its exact expected scale tr(A Aᵀ) under pure noise, where A maps
    observations to de-meaned residuals.  Dividing the first by the
    second gives an unbiased variance estimate up to smoothing bias,
    so narrow windows do not deflate the estimate.
    """
    dt = t[None, :] - t[:, None]
    w = kernel.weight(dt / h) / h
    wd = w * dt
    s0 = w.sum(axis=1)
    s1 = wd.sum(axis=1)
    s2 = (wd * dt).sum(axis=1)
    det = s0 * s2 - s1 * s1
    ok = det > 1e-12 * (s0 * s2 + s1 * s1 + 1e-300)
    # local-linear equivalent-kernel rows; degenerate rows fall back to
    # a local constant
    hat_lin = (w * s2[:, None] - wd * s1[:, None]) / np.where(ok, det, 1.0)[:, None]
    hat_const = w / np.where(s0 > 0.0, s0, 1.0)[:, None]
    hat = np.where(ok[:, None], hat_lin, hat_const)
    resid_map = np.eye(len(t)) - hat
    resid_map -= resid_map.mean(axis=0, keepdims=True)
    resid = resid_map @ y
    return float(resid @ resid), float((resid_map * resid_map).sum())


class PilotState:
    """Online estimates of the curvature and variance functionals.

    Holds six small candidate banks: a local-cubic bank for curve
    curvature, two curve banks for the conditional second moment r(t),
    and three surface banks for the covariance pilots.  ``design_mode``
    switches the variance functionals between the sparse forms and the
    dense forms with their count-ratio corrections.
    """

    def __init__(self, kernel: Kernel, curve_grid: GridSpec,
                 surface_grid: GridSpec, J_mean: int, J_cov: int = 3,
                 design_mode: str = "sparse", G: float | None = None,
                 R: float | None = None, freeze_after: int = 200,
                 theta_floor: float = THETA_FLOOR, nu_floor: float = NU_FLOOR,
                 trim: float = DEFAULT_TRIM, presmooth_scale: float = 0.2,
                 ridge_scale: float = DEFAULT_RIDGE_SCALE):
        if design_mode not in ("sparse", "dense"):
            raise ValueError("design_mode must be 'sparse' or 'dense'")
        self.kernel = kernel
        self.curve_grid = curve_grid
        self.surface_grid = surface_grid
        self.design_mode = design_mode
        self.G = G
        self.R = R
        self.freeze_after = freeze_after
        self.theta_floor = theta_floor
        self.nu_floor = nu_floor
        self.trim = trim
        self.presmooth_scale = presmooth_scale
        self.ridge_scale = ridge_scale

        e = PILOT_EXPONENTS
        self.cubic_bank = CandidateBank(1, J_mean, e["theta_mu"], curve_grid, dim=4)
        self.mu_bank = CandidateBank(1, J_mean, e["nu_mu"], curve_grid, dim=2)
        self.r_bank = CandidateBank(1, J_mean, e["nu_mu"], curve_grid, dim=2)
        self.gamma_bank = CandidateBank(2, J_cov, e["nu_gamma"], surface_grid, dim=3)
        self.curv_bank = CandidateBank(2, J_cov, e["theta_gamma"], surface_grid, dim=3)
        self.v1_bank = CandidateBank(2, J_cov, e["nu_gamma"], surface_grid, dim=3)

        self.theta_mu = theta_floor
        self.nu_mu = nu_floor
        self.theta_gamma = theta_floor
        self.nu_gamma = nu_floor
        self.sigma2 = 0.0        # dense mode: running presmoothed noise variance
        self.sigma2_check = 0.0  # sparse mode: integrated r - diag(gamma)

    # -- extraction helpers ------------------------------------------------

    def _curve_values(self, bank: CandidateBank, component: int = 0) -> np.ndarray:
        coeffs, valid = bank.slot_solution(0, self.ridge_scale)
        return fill_gaps_1d(coeffs[:, component], valid, bank.grid.points)

    def rates(self, s1: int, s2: int) -> PilotBandwidths:
        return pilot_bandwidths(max(s1, 1), max(s2, 1), self.G, self.R)

    def current_sigma2(self) -> float:
        return self.sigma2 if self.design_mode == "dense" else self.sigma2_check

    # -- curve pilots --------------------------------------------------------

    def update_theta_mu(self, block: Block, ledger: CountLedger) -> None:
        """Absorb the block into the local-cubic bank and refresh theta_mu."""
        h = self.rates(ledger.s1, ledger.s2).theta_mu
        ys = [s.values for s in block.subjects]
        self.cubic_bank.absorb_block(
            h, int(ledger.last_counts[0]),
            lambda eta: cubic_substats(block, ys, eta, self.curve_grid, self.kernel))
        try:
            curv = self._curve_values(self.cubic_bank, component=2) * 2.0
        except AllDegenerate:
            return
        dens = self.cubic_bank.density(ledger.s1, self.kernel)
        theta = integrate_curve(curv * curv * dens, self.curve_grid, self.trim)
        self.theta_mu = max(self.theta_floor, theta)

    def update_sigma2_dense(self, block: Block, ledger: CountLedger) -> None:
        """Running noise variance from per-subject presmoothing residuals.

        Each subject with at least four measurements is smoothed against
        itself; centered residuals feed the running per-observation mean.
        """
        s1_new = int(ledger.last_counts[0])
        s1_total = ledger.s1
        if s1_new == 0 or s1_total == 0:
            return
        sq = 0.0
        for subj in block.subjects:
            if subj.m < 4:
                continue
            rng = float(subj.times.max() - subj.times.min())
            if rng <= 0.0:
                continue
            h = self.presmooth_scale * rng * subj.m ** -0.2
            rss, scale = _subject_presmooth(subj.times, subj.values, h,
                                            self.kernel)
            if scale < 0.5:
                continue
            # rescale so the per-observation running mean stays unbiased
            sq += rss * subj.m / scale
        s1_prev = s1_total - s1_new
        self.sigma2 = sq / s1_total + (s1_prev / s1_total) * self.sigma2

    def update_nu_mu(self, block: Block, ledger: CountLedger,
                     h_mu_prev: float | None = None) -> None:
        """Refresh nu_mu from smoothed squared residuals of a pilot mean fit."""
        h = self.rates(ledger.s1, ledger.s2).nu_mu
        count = int(ledger.last_counts[0])
        self.mu_bank.absorb_block(
            h, count,
            lambda eta: mean_substats(block, eta, self.curve_grid, self.kernel))
        try:
            mu_vals = self._curve_values(self.mu_bank)
        except AllDegenerate:
            return
        pts = self.curve_grid.points
        r_sq = [(s.values - np.interp(s.times, pts, mu_vals)) ** 2
                for s in block.subjects]
        self.r_bank.absorb_block(
            h, count,
            lambda eta: response_substats(block, r_sq, eta, self.curve_grid, self.kernel))
        try:
            r_vals = self._curve_values(self.r_bank)
        except AllDegenerate:
            return
        nu = self.kernel.rfactor * integrate_curve(r_vals, self.curve_grid, self.trim)
        if self.design_mode == "dense":
            if h_mu_prev is None:
                h_mu_prev = online_bandwidth(self.theta_mu, max(nu, self.nu_floor),
                                             ledger.s1, 1, self.kernel.alpha,
                                             self.curve_grid)
            rho = ledger.s2 * h_mu_prev / ledger.s1
            dens = self.mu_bank.density(ledger.s1, self.kernel)
            nu += rho * integrate_curve((r_vals - self.sigma2) * dens,
                                        self.curve_grid, self.trim)
        self.nu_mu = max(self.nu_floor, nu)

    # -- surface pilots ------------------------------------------------------

    def cov_pilots_frozen(self, block_index: int) -> bool:
        return bool(self.freeze_after) and block_index > self.freeze_after

    def update_cov_pilots(self, block: Block, residuals, ledger: CountLedger,
                          pairs=None) -> None:
        """Refresh theta_gamma, nu_gamma and the noise variance estimate.

        ``pairs`` may carry precomputed (t1, t2, c) arrays for the block.
        No-op for blocks without measurement pairs and after the freeze
        point, where only the running counts keep shrinking the bandwidth.
        """
        s2_new = int(ledger.last_counts[1])
        if s2_new == 0 or self.cov_pilots_frozen(ledger.blocks):
            return
        t1, t2, c = pairs if pairs is not None else build_pairs(block, residuals)
        rates = self.rates(ledger.s1, ledger.s2)
        pts = self.surface_grid.points
        kern = self.kernel

        def pair_fn(resp):
            return lambda eta: Stats2D(*pair_design_sums(t1, t2, resp, eta, pts, pts, kern))

        self.gamma_bank.absorb_block(rates.nu_gamma, s2_new, pair_fn(c))
        self.curv_bank.absorb_block(rates.theta_gamma, s2_new, pair_fn(c))
        try:
            gamma = extract_surface(self.gamma_bank, self.ridge_scale)
        except AllDegenerate:
            return
        centered_sq = (c - gamma.evaluate(t1, t2)) ** 2
        self.v1_bank.absorb_block(rates.nu_gamma, s2_new, pair_fn(centered_sq))

        self._refresh_theta_gamma(ledger)
        self._refresh_sigma2_check(gamma)
        self._refresh_nu_gamma(gamma, ledger)

    def _refresh_theta_gamma(self, ledger: CountLedger) -> None:
        try:
            surf = extract_surface(self.curv_bank, self.ridge_scale)
        except AllDegenerate:
            return
        lap = _laplacian(surf.values, self.surface_grid.spacing)
        dens = self._density_on_surface_axis(ledger)
        weight = dens[:, None] * dens[None, :]
        theta = integrate_surface(lap * lap * weight, self.surface_grid, self.trim)
        self.theta_gamma = max(self.theta_floor, theta)

    def _density_on_surface_axis(self, ledger: CountLedger) -> np.ndarray:
        """One-axis design density, interpolated onto the surface grid."""
        dens = self.cubic_bank.density(max(ledger.s1, 1), self.kernel)
        return np.interp(self.surface_grid.points, self.curve_grid.points, dens)

    def _refresh_sigma2_check(self, gamma) -> None:
        try:
            r_vals = self._curve_values(self.r_bank)
        except AllDegenerate:
            return
        pts = self.surface_grid.points
        r_axis = np.interp(pts, self.curve_grid.points, r_vals)
        diff = r_axis - np.diag(gamma.values)
        keep = trim_mask(self.surface_grid, self.trim)
        length = float(pts[keep][-1] - pts[keep][0])
        est = float(np.trapezoid(diff[keep], pts[keep])) / length
        self.sigma2_check = max(0.0, est)

    def _refresh_nu_gamma(self, gamma, ledger: CountLedger) -> None:
        v1_coeffs, v1_valid = self.v1_bank.slot_solution(0, self.ridge_scale)
        try:
            v1 = fill_gaps_2d(v1_coeffs[..., 0], v1_valid, self.surface_grid.points)
        except AllDegenerate:
            return
        v1 = 0.5 * (v1 + v1.T)
        grid = self.surface_grid
        nu_sparse = self.kernel.rfactor ** 2 * integrate_surface(v1, grid, self.trim)
        if self.design_mode == "sparse":
            self.nu_gamma = max(self.nu_floor, nu_sparse)
            return

        # Dense design: put back the shared-index and no-noise covariance
        # terms, scaled by the plug-in count-ratio constants.
        sig2 = self.sigma2
        g = gamma.values
        gd = np.diag(g)
        ephi = v1 - sig2 * (gd[:, None] + gd[None, :]) - sig2 * sig2 + g * g
        v2_st = ephi + sig2 * gd[None, :] - g * g
        v2_ts = ephi + sig2 * gd[:, None] - g * g
        v3 = ephi - g * g
        c1 = (max(nu_sparse, self.nu_floor)
              / (self.kernel.alpha ** 2 * self.theta_gamma)) ** (1.0 / 6.0)
        nu = nu_sparse
        if ledger.s3 > 0:
            c0 = ledger.s2 * ledger.s4 / float(ledger.s3) ** 2
            if c0 > 0:
                f1 = np.interp(grid.points, self.curve_grid.points,
                               self.mu_bank.density(max(ledger.s1, 1), self.kernel))
                cross = f1[:, None] * v2_ts + f1[None, :] * v2_st
                nu += (self.kernel.rfactor * c1 / np.sqrt(c0)
                       * integrate_surface(cross, grid, self.trim))
        if ledger.s4 > 0:
            f2 = self.gamma_bank.density(ledger.s2, self.kernel)
            nu += c1 * c1 * integrate_surface(v3 * f2, grid, self.trim)
        self.nu_gamma = max(self.nu_floor, nu)

    # -- serialization -------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "theta_mu": self.theta_mu,
            "nu_mu": self.nu_mu,
            "theta_gamma": self.theta_gamma,
            "nu_gamma": self.nu_gamma,
            "sigma2": self.sigma2,
            "sigma2_check": self.sigma2_check,
            "cubic_bank": self.cubic_bank.state_dict(),
            "mu_bank": self.mu_bank.state_dict(),
            "r_bank": self.r_bank.state_dict(),
            "gamma_bank": self.gamma_bank.state_dict(),
            "curv_bank": self.curv_bank.state_dict(),
            "v1_bank": self.v1_bank.state_dict(),
        }

    def load_state(self, state: dict) -> None:
        self.theta_mu = float(state["theta_mu"])
        self.nu_mu = float(state["nu_mu"])
        self.theta_gamma = float(state["theta_gamma"])
        self.nu_gamma = float(state["nu_gamma"])
        self.sigma2 = float(state["sigma2"])
        self.sigma2_check = float(state["sigma2_check"])
        self.cubic_bank.load_state(state["cubic_bank"])
        self.mu_bank.load_state(state["mu_bank"])
        self.r_bank.load_state(state["r_bank"])
        self.gamma_bank.load_state(state["gamma_bank"])
        self.curv_bank.load_state(state["curv_bank"])
        self.v1_bank.load_state(state["v1_bank"])
