"""Streaming state: measurement counts, matched candidate banks, extraction.

A bank keeps L slots of additive design sums, one per candidate bandwidth.
When a block arrives, fresh candidates are generated from the current
plug-in bandwidth, each candidate is matched to the closest slot centroid,
and the slot contents are merged forward.  Memory is O(L * grid), never a
function of how many blocks have been absorbed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import griddata

from .errors import AllDegenerate, InvalidBandwidth, ShapeMismatch
from .kernels import (DEFAULT_RIDGE_SCALE, Block, GridSpec, Kernel,
                      observation_counts, solve_grid)


@dataclass
class CountLedger:
    """Running falling-factorial measurement counts across the stream."""

    blocks: int = 0
    n_subjects: int = 0
    totals: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    last_counts: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    last_subjects: int = 0

    def update(self, block: Block) -> "CountLedger":
        s, n = observation_counts(block)
        self.blocks += 1
        self.n_subjects += n
        self.totals = self.totals + s
        self.last_counts = s
        self.last_subjects = n
        return self

    @property
    def s1(self) -> int:
        return int(self.totals[0])

    @property
    def s2(self) -> int:
        return int(self.totals[1])

    @property
    def s3(self) -> int:
        return int(self.totals[2])

    @property
    def s4(self) -> int:
        return int(self.totals[3])

    def mean_obs(self, d: int) -> float:
        """Average per-subject count backing the d-dimensional smoother."""
        if self.n_subjects == 0:
            return 0.0
        return float(self.totals[d - 1]) / self.n_subjects


def update_counts(ledger: CountLedger, block: Block) -> CountLedger:
    """Fold one block's counts into the ledger (mutates and returns it)."""
    return ledger.update(block)


def candidate_sequence(h: float, count: int, exponent: float) -> np.ndarray:
    """Strictly decreasing candidates ((count-l+1)/count)^exponent * h."""
    if count < 1:
        raise ValueError("need at least one candidate")
    if not np.isfinite(h) or h <= 0:
        raise InvalidBandwidth(f"bandwidth must be positive, got {h}")
    fractions = (count - np.arange(count, dtype=float)) / count
    return fractions**exponent * h


def generate_candidates(h: float, L: int, d: int) -> np.ndarray:
    """Candidate bandwidths for the main d-dimensional smoother."""
    if d not in (1, 2):
        raise ValueError("d must be 1 (curve) or 2 (surface)")
    return candidate_sequence(h, L, 1.0 / (d + 4))


def match_candidates(etas: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest previous centroid for each fresh candidate.

    Ties break toward the smaller index.  An all-zero centroid vector marks
    a bank that has absorbed nothing yet; the plan is then the identity.
    """
    etas = np.asarray(etas, dtype=float)
    centroids = np.asarray(centroids, dtype=float)
    if etas.shape != centroids.shape:
        raise ShapeMismatch("candidates and centroids must have equal length")
    if not centroids.any():
        return np.arange(etas.size)
    return np.abs(etas[:, None] - centroids[None, :]).argmin(axis=1)


class CandidateBank:
    """L slots of mergeable design sums indexed by candidate bandwidth."""

    def __init__(self, d: int, L: int, exponent: float, grid: GridSpec, dim: int):
        self.d = d
        self.L = L
        self.exponent = exponent
        self.grid = grid
        self.dim = dim
        shape = (L, grid.n_points, grid.n_points) if d == 2 else (L, grid.n_points)
        self.stats_p = np.zeros(shape + (dim, dim))
        self.stats_q = np.zeros(shape + (dim,))
        self.centroids = np.zeros(L)
        self.count_sum = 0
        self.blocks_absorbed = 0
        self.last_bandwidth = 0.0

    def absorb_block(self, h: float, count: int, substats_fn: Callable) -> "CandidateBank":
        """Merge one block in: generate, match, add, and recentre.

        ``substats_fn(eta)`` must return this block's design sums at
        bandwidth ``eta``.  Slot l becomes fresh(eta_l) plus the previous
        content of its matched slot; previous slots are only read, so one
        slot may feed several successors.  Centroids move toward the
        absorbed candidate with weight count / total count.
        """
        if count <= 0:
            raise ValueError("absorbed block must carry a positive count")
        etas = candidate_sequence(h, self.L, self.exponent)
        if self.blocks_absorbed == 0:
            plan = np.arange(self.L)
        else:
            plan = match_candidates(etas, self.centroids)
        fresh = [substats_fn(float(e)) for e in etas]
        new_p = np.stack([f.p for f in fresh]) + self.stats_p[plan]
        new_q = np.stack([f.q for f in fresh]) + self.stats_q[plan]
        self.count_sum += int(count)
        omega = count / self.count_sum
        self.centroids = (1.0 - omega) * self.centroids[plan] + omega * etas
        self.stats_p = new_p
        self.stats_q = new_q
        self.blocks_absorbed += 1
        self.last_bandwidth = float(etas[0])
        return self

    def slot_solution(self, slot: int = 0,
                      ridge_scale: float = DEFAULT_RIDGE_SCALE
                      ) -> tuple[np.ndarray, np.ndarray]:
        return solve_grid(self.stats_p[slot], self.stats_q[slot], ridge_scale)

    def slot_mass(self, slot: int = 0) -> np.ndarray:
        """Summed kernel mass per grid point (the zeroth design moment)."""
        return self.stats_p[slot][..., 0, 0]

    def density(self, total_count: int, kernel: Kernel) -> np.ndarray:
        """Boundary-corrected design density estimate from slot 1.

        The zeroth moment divided by the total count estimates the density
        except near the edges, where part of the kernel window leaves the
        domain; dividing by the window mass implied by the slot's centroid
        bandwidth restores the level there.
        """
        if self.blocks_absorbed == 0 or total_count <= 0:
            shape = self.slot_mass(0).shape
            return np.full(shape, 1.0 / self.grid.width)
        pts = self.grid.points
        hbar = float(self.centroids[0])
        mass = (kernel.cdf((self.grid.hi - pts) / hbar)
                - kernel.cdf((self.grid.lo - pts) / hbar))
        if self.d == 2:
            mass = mass[:, None] * mass[None, :]
        return self.slot_mass(0) / (total_count * mass)

    # -- serialization ----------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "centroids": self.centroids,
            "p": self.stats_p,
            "q": self.stats_q,
            "count_sum": self.count_sum,
            "blocks": self.blocks_absorbed,
            "last_bandwidth": self.last_bandwidth,
        }

    def load_state(self, state: dict) -> None:
        cent = np.asarray(state["centroids"], dtype=float)
        p = np.asarray(state["p"], dtype=float)
        q = np.asarray(state["q"], dtype=float)
        if cent.shape != self.centroids.shape or p.shape != self.stats_p.shape \
                or q.shape != self.stats_q.shape:
            raise ShapeMismatch("bank state does not match the configured shapes")
        self.centroids = cent
        self.stats_p = p
        self.stats_q = q
        self.count_sum = int(state["count_sum"])
        self.blocks_absorbed = int(state["blocks"])
        self.last_bandwidth = float(state["last_bandwidth"])


def make_curve_bank(L: int, grid: GridSpec) -> CandidateBank:
    return CandidateBank(d=1, L=L, exponent=1.0 / 5.0, grid=grid, dim=2)


def make_surface_bank(L: int, grid: GridSpec) -> CandidateBank:
    return CandidateBank(d=2, L=L, exponent=1.0 / 6.0, grid=grid, dim=3)


def make_cubic_bank(L: int, grid: GridSpec, exponent: float) -> CandidateBank:
    return CandidateBank(d=1, L=L, exponent=exponent, grid=grid, dim=4)


@dataclass
class CurveEstimate:
    """Curve values on a grid, with the bandwidth that produced them."""

    grid: GridSpec
    values: np.ndarray
    bandwidth: float
    block_index: int

    def evaluate(self, t) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=float), self.grid.points, self.values)


@dataclass
class SurfaceEstimate:
    """Symmetric surface values on a square grid."""

    grid: GridSpec
    values: np.ndarray
    bandwidth: float
    block_index: int

    def evaluate(self, s, t) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        pts = self.grid.points
        si = np.clip(np.searchsorted(pts, s) - 1, 0, pts.size - 2)
        ti = np.clip(np.searchsorted(pts, t) - 1, 0, pts.size - 2)
        ds = (s - pts[si]) / (pts[si + 1] - pts[si])
        dt = (t - pts[ti]) / (pts[ti + 1] - pts[ti])
        v = self.values
        return ((1 - ds) * (1 - dt) * v[si, ti] + ds * (1 - dt) * v[si + 1, ti]
                + (1 - ds) * dt * v[si, ti + 1] + ds * dt * v[si + 1, ti + 1])


def fill_gaps_1d(values: np.ndarray, valid: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Linearly interpolate across degenerate grid points (flat at the ends)."""
    if valid.all():
        return values
    if not valid.any():
        raise AllDegenerate("no grid point has data in its kernel window")
    out = values.copy()
    out[~valid] = np.interp(pts[~valid], pts[valid], values[valid])
    return out


def fill_gaps_2d(values: np.ndarray, valid: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Fill degenerate surface points from their solvable neighbours."""
    if valid.all():
        return values
    if not valid.any():
        raise AllDegenerate("no surface grid point has data in its kernel window")
    ss, tt = np.meshgrid(pts, pts, indexing="ij")
    good = np.column_stack([ss[valid], tt[valid]])
    bad = np.column_stack([ss[~valid], tt[~valid]])
    out = values.copy()
    filled = griddata(good, values[valid], bad, method="linear")
    hole = np.isnan(filled)
    if hole.any():
        filled[hole] = griddata(good, values[valid], bad[hole], method="nearest")
    out[~valid] = filled
    return out


def extract_curve(bank: CandidateBank,
                  ridge_scale: float = DEFAULT_RIDGE_SCALE) -> CurveEstimate:
    """Solve slot 1 of a curve bank into a gap-filled estimate."""
    coeffs, valid = bank.slot_solution(0, ridge_scale)
    values = fill_gaps_1d(coeffs[..., 0], valid, bank.grid.points)
    return CurveEstimate(bank.grid, values, bank.last_bandwidth, bank.blocks_absorbed)


def extract_surface(bank: CandidateBank,
                    ridge_scale: float = DEFAULT_RIDGE_SCALE) -> SurfaceEstimate:
    """Solve slot 1 of a surface bank; gaps filled, then symmetrized."""
    coeffs, valid = bank.slot_solution(0, ridge_scale)
    values = fill_gaps_2d(coeffs[..., 0], valid, bank.grid.points)
    values = 0.5 * (values + values.T)
    return SurfaceEstimate(bank.grid, values, bank.last_bandwidth, bank.blocks_absorbed)
