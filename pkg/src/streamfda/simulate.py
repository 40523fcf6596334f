"""Synthetic functional data and the online-versus-batch comparison harness.

The generator draws subjects from a ten-component cosine expansion with
polynomially decaying variances around a sine mean, contaminated with
Gaussian noise.  Draws are counter-based: every (seed, rep, block,
subject) tuple owns an independent stream, so reps can run in any order
or in parallel and still reproduce bit for bit.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bandwidth import DEFAULT_TRIM, integrate_curve, integrate_surface
from .batch import batch_fit
from .engine import FitConfig, OnlineEstimator
from .kernels import Block, Subject
from .stream import (CurveEstimate, SurfaceEstimate, candidate_sequence,
                     match_candidates)

#: Block-shape presets: (subjects mean, subjects sd, per-subject mean, sd).
_DESIGNS = {
    "sparse": (20.0, 3.0, 6.0, 2.0),
    "dense": (3.0, 0.0, 20.0, 2.0),
}

#: Pseudo subject index reserved for block-level draws (sizes).
_BLOCK_STREAM = 0xFFFFFFFF


@dataclass
class SimConfig:
    """Generator settings; presets cover the sparse and dense regimes."""

    design: str = "sparse"
    sigma: float = 0.5
    n_components: int = 10
    lambda_scale: float = 0.4
    lambda_decay: float = 2.0
    K_max: int = 200
    n_reps: int = 20
    seed: int = 0
    mean: str = "sine"  # sine | linear | zero
    n_mean: float | None = None
    n_sd: float | None = None
    m_mean: float | None = None
    m_sd: float | None = None

    def shape_params(self) -> tuple[float, float, float, float]:
        if self.design in _DESIGNS:
            preset = _DESIGNS[self.design]
        elif self.design == "custom":
            preset = _DESIGNS["sparse"]
        else:
            raise ValueError(f"unknown design {self.design!r}")
        overrides = (self.n_mean, self.n_sd, self.m_mean, self.m_sd)
        return tuple(p if o is None else float(o)
                     for p, o in zip(preset, overrides))

    def eigenvalues(self) -> np.ndarray:
        i = np.arange(1, self.n_components + 1, dtype=float)
        return self.lambda_scale * i ** -self.lambda_decay

    def design_mode(self) -> str:
        return "dense" if self.design == "dense" else "sparse"


def true_mean(t) -> np.ndarray:
    return 2.0 * np.sin(2.0 * np.pi * np.asarray(t, dtype=float))


def mean_value(kind: str, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if kind == "sine":
        return true_mean(t)
    if kind == "linear":
        return 3.0 + 2.0 * t
    if kind == "zero":
        return np.zeros_like(t)
    raise ValueError(f"unknown mean kind {kind!r}")


def basis_functions(t, n_components: int = 10) -> np.ndarray:
    """First component constant, the rest scaled cosines; orthonormal."""
    t = np.asarray(t, dtype=float)
    out = np.empty((n_components,) + t.shape)
    out[0] = 1.0
    for i in range(2, n_components + 1):
        out[i - 1] = np.sqrt(2.0) * np.cos((i - 1) * np.pi * t)
    return out


def true_cov(s, t, n_components: int = 10, lambda_scale: float = 0.4,
             lambda_decay: float = 2.0) -> np.ndarray:
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float),
                               np.asarray(t, dtype=float))
    i = np.arange(1, n_components + 1, dtype=float)
    lam = lambda_scale * i ** -lambda_decay
    ps = basis_functions(s, n_components)
    pt = basis_functions(t, n_components)
    return np.tensordot(lam, ps * pt, axes=(0, 0))


def _stream(seed: int, rep: int, block: int, subject: int) -> np.random.Generator:
    w0 = ((seed & 0xFFFFFFFF) << 32) | (rep & 0xFFFFFFFF)
    w1 = ((block & 0xFFFFFFFF) << 32) | (subject & 0xFFFFFFFF)
    key = np.array([w0, w1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate_block(config: SimConfig, k: int, rep: int = 0) -> Block:
    """Draw block k of the given repetition; deterministic per key."""
    n_mean, n_sd, m_mean, m_sd = config.shape_params()
    brng = _stream(config.seed, rep, k, _BLOCK_STREAM)
    n = max(1, int(np.rint(brng.normal(n_mean, n_sd))))
    ms = np.maximum(1, np.rint(brng.normal(m_mean, m_sd, size=n))).astype(int)
    lam_sd = np.sqrt(config.eigenvalues())
    subjects = []
    for i in range(n):
        srng = _stream(config.seed, rep, k, i)
        m = int(ms[i])
        t = srng.uniform(0.0, 1.0, size=m)
        xi = srng.normal(0.0, 1.0, size=config.n_components) * lam_sd
        eps = srng.normal(0.0, config.sigma, size=m)
        y = mean_value(config.mean, t) + xi @ basis_functions(t, config.n_components) + eps
        subjects.append(Subject(t, y))
    return Block(block_id=k, subjects=subjects)


def imse(estimate, truth_fn, trim: float = DEFAULT_TRIM) -> float:
    """Integrated squared error against a truth callable, boundary-trimmed."""
    if isinstance(estimate, CurveEstimate):
        diff = estimate.values - truth_fn(estimate.grid.points)
        return integrate_curve(diff * diff, estimate.grid, trim)
    if isinstance(estimate, SurfaceEstimate):
        pts = estimate.grid.points
        ss, tt = np.meshgrid(pts, pts, indexing="ij")
        diff = estimate.values - truth_fn(ss, tt)
        return integrate_surface(diff * diff, estimate.grid, trim)
    raise TypeError("estimate must be a CurveEstimate or SurfaceEstimate")


# -- pseudo-bandwidth chain diagnostics --------------------------------------


@dataclass
class ChainMoments:
    """Weighted power sums of a materialized bandwidth chain."""

    rho: dict


def chain_moments(chain: Sequence[tuple[float, float]],
                  powers: Sequence[int] = (-2, -1, 2)) -> ChainMoments:
    if not chain:
        raise ValueError("empty chain")
    etas = np.array([c[0] for c in chain], dtype=float)
    counts = np.array([c[1] for c in chain], dtype=float)
    w = counts / counts.sum()
    return ChainMoments({int(j): float(np.sum(w * etas ** float(j)))
                         for j in powers})


class ReferenceChain:
    """Materialized per-slot bandwidth chains.

    Mirrors the candidate-bank bookkeeping but keeps the full list of
    (bandwidth, count) absorptions per slot, which the streaming path
    deliberately forgets.  Reference mode only: memory grows with K.
    """

    def __init__(self, L: int, exponent: float):
        self.L = L
        self.exponent = exponent
        self.centroids = np.zeros(L)
        self.count_sum = 0
        self.blocks = 0
        self.chains: list[list[tuple[float, int]]] = [[] for _ in range(L)]

    def absorb(self, h: float, count: int) -> None:
        etas = candidate_sequence(h, self.L, self.exponent)
        if self.blocks == 0:
            plan = np.arange(self.L)
        else:
            plan = match_candidates(etas, self.centroids)
        self.chains = [self.chains[j] + [(float(e), int(count))]
                       for e, j in zip(etas, plan)]
        self.count_sum += int(count)
        omega = count / self.count_sum
        self.centroids = (1.0 - omega) * self.centroids[plan] + omega * etas
        self.blocks += 1

    def slot_chain(self, slot: int = 0) -> list[tuple[float, int]]:
        return list(self.chains[slot])


# -- the experiment driver ----------------------------------------------------


@dataclass
class ExperimentReport:
    """Per-rep, per-checkpoint traces of one comparison run.

    Online quantities are keyed by L; batch quantities are shared.  All
    arrays have shape (n_reps, n_checkpoints).
    """

    sim: SimConfig
    L_values: tuple
    checkpoints: tuple
    eff_mean: dict
    eff_cov: dict
    h_mu_online: dict
    h_gamma_online: dict
    t_online_ms: dict
    h_mu_batch: np.ndarray
    h_gamma_batch: np.ndarray
    t_batch_ms: np.ndarray

    def final_eff(self, L: int) -> tuple[float, float]:
        """Monte Carlo mean efficiencies at the last checkpoint."""
        return (float(np.nanmean(self.eff_mean[L][:, -1])),
                float(np.nanmean(self.eff_cov[L][:, -1])))


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.ones_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def run_experiment(sim: SimConfig, L=5, mode: str = "plugin",
                   checkpoints: Sequence[int] | None = None,
                   fit_overrides: dict | None = None,
                   pinned_h_mu: float | None = None,
                   pinned_h_gamma: float | None = None) -> ExperimentReport:
    """Stream all reps online and refit batch at the checkpoints.

    ``mode="plugin"`` runs the full bandwidth selectors on both sides.
    ``mode="pinned"`` pins the supplied bandwidths everywhere and hands
    the online residual stream to the batch covariance, making the two
    methods algebraically identical for L=1.  With several L values the
    generated blocks and the batch refits are shared across L.
    """
    L_values = (int(L),) if np.isscalar(L) else tuple(int(v) for v in L)
    if mode not in ("plugin", "pinned"):
        raise ValueError("mode must be 'plugin' or 'pinned'")
    if mode == "pinned":
        if pinned_h_mu is None or pinned_h_gamma is None:
            raise ValueError("pinned mode needs both bandwidths")
        if len(L_values) != 1:
            raise ValueError("pinned mode compares one L at a time")
    if checkpoints is None:
        checkpoints = tuple(range(40, sim.K_max + 1, 40))
    cps = tuple(sorted({int(c) for c in checkpoints if 1 <= c <= sim.K_max}))
    if not cps:
        raise ValueError("no checkpoint falls inside the stream")
    cp_index = {k: i for i, k in enumerate(cps)}
    n_reps, n_cp = sim.n_reps, len(cps)

    overrides = dict(fit_overrides or {})
    overrides.setdefault("design_mode", sim.design_mode())
    if mode == "pinned":
        overrides["fixed_h_mu"] = pinned_h_mu
        overrides["fixed_h_gamma"] = pinned_h_gamma

    mean_truth = lambda t: mean_value(sim.mean, t)
    cov_truth = lambda s, t: true_cov(s, t, sim.n_components,
                                      sim.lambda_scale, sim.lambda_decay)

    shape = (n_reps, n_cp)
    ise_mean_on = {v: np.full(shape, np.nan) for v in L_values}
    ise_cov_on = {v: np.full(shape, np.nan) for v in L_values}
    h_mu_on = {v: np.full(shape, np.nan) for v in L_values}
    h_ga_on = {v: np.full(shape, np.nan) for v in L_values}
    t_on = {v: np.full(shape, np.nan) for v in L_values}
    ise_mean_b = np.full(shape, np.nan)
    ise_cov_b = np.full(shape, np.nan)
    h_mu_b = np.full(shape, np.nan)
    h_ga_b = np.full(shape, np.nan)
    t_b = np.full(shape, np.nan)

    for rep in range(n_reps):
        blocks = [generate_block(sim, k, rep) for k in range(1, sim.K_max + 1)]
        resid_stream: list[list[np.ndarray]] = []
        for Lv in L_values:
            est = OnlineEstimator(FitConfig(L=Lv, **overrides))
            step_ms = np.empty(sim.K_max)
            for k, block in enumerate(blocks, start=1):
                t0 = time.perf_counter()
                est.step(block)
                step_ms[k - 1] = 1e3 * (time.perf_counter() - t0)
                if mode == "pinned":
                    resid_stream.append(est.last_residuals)
                if k in cp_index:
                    i = cp_index[k]
                    ise_mean_on[Lv][rep, i] = imse(est.last_curve, mean_truth)
                    if est.last_surface is not None:
                        ise_cov_on[Lv][rep, i] = imse(est.last_surface, cov_truth)
                    h_mu_on[Lv][rep, i] = est.h_mu
                    if est.h_gamma is not None:
                        h_ga_on[Lv][rep, i] = est.h_gamma
                    t_on[Lv][rep, i] = step_ms[max(0, k - 5):k].mean()
        for k in cps:
            i = cp_index[k]
            t0 = time.perf_counter()
            if mode == "pinned":
                res = batch_fit(blocks[:k], FitConfig(L=1, **overrides),
                                h_mu=pinned_h_mu, h_gamma=pinned_h_gamma,
                                residuals=resid_stream[:k])
            else:
                res = batch_fit(blocks[:k],
                                FitConfig(L=1, **{**overrides,
                                                  "J_mean": 1, "J_cov": 1}))
            t_b[rep, i] = 1e3 * (time.perf_counter() - t0)
            ise_mean_b[rep, i] = imse(res.curve, mean_truth)
            h_mu_b[rep, i] = res.h_mu
            if res.surface is not None:
                ise_cov_b[rep, i] = imse(res.surface, cov_truth)
                h_ga_b[rep, i] = res.h_gamma

    eff_mean = {v: _safe_ratio(ise_mean_b, ise_mean_on[v]) for v in L_values}
    eff_cov = {v: _safe_ratio(ise_cov_b, ise_cov_on[v]) for v in L_values}
    return ExperimentReport(sim, L_values, cps, eff_mean, eff_cov,
                            h_mu_on, h_ga_on, t_on, h_mu_b, h_ga_b, t_b)


_REPORT_COLUMNS = ("rep", "K", "eff_mean", "eff_cov", "h_mu_online",
                   "h_mu_batch", "h_gamma_online", "h_gamma_batch",
                   "t_online_ms", "t_batch_ms")


def write_report(report: ExperimentReport, path) -> list[str]:
    """One CSV per L value; a single L writes exactly the given path."""
    path = Path(path)
    written = []
    for Lv in report.L_values:
        if len(report.L_values) == 1:
            target = path
        else:
            target = path.with_name(f"{path.stem}_L{Lv}{path.suffix}")
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_REPORT_COLUMNS)
            for rep in range(report.sim.n_reps):
                for i, k in enumerate(report.checkpoints):
                    w.writerow([
                        rep, k,
                        f"{report.eff_mean[Lv][rep, i]:.8g}",
                        f"{report.eff_cov[Lv][rep, i]:.8g}",
                        f"{report.h_mu_online[Lv][rep, i]:.8g}",
                        f"{report.h_mu_batch[rep, i]:.8g}",
                        f"{report.h_gamma_online[Lv][rep, i]:.8g}",
                        f"{report.h_gamma_batch[rep, i]:.8g}",
                        f"{report.t_online_ms[Lv][rep, i]:.6g}",
                        f"{report.t_batch_ms[rep, i]:.6g}",
                    ])
        written.append(str(target))
    return written
