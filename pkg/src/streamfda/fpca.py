"""Eigendecomposition of a gridded covariance surface.

The integral operator is discretized with trapezoid quadrature: with
W = diag(w) the symmetric matrix sqrt(W) G sqrt(W) is decomposed and
eigenvectors are mapped back through 1/sqrt(w).  Eigenfunctions then
satisfy the trapezoid orthonormality relation on the grid exactly, and
the clipped reconstruction sum reproduces the projected surface.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .kernels import GridSpec

#: Eigenvalues below this fraction of the largest one count as zero.
_RELATIVE_RANK_TOL = 1e-12


@dataclass(frozen=True)
class FpcaResult:
    """Ordered nonnegative eigenvalues with matching eigenfunctions."""

    eigenvalues: np.ndarray       # (r,) clipped, descending
    raw_eigenvalues: np.ndarray   # (G,) full spectrum, descending, signed
    eigenfunctions: np.ndarray    # (r, G) rows
    fve: np.ndarray               # (r,) cumulative fraction of variance
    grid: GridSpec
    degenerate: bool

    @property
    def n_components(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self, n: int | None = None) -> np.ndarray:
        """Sum of the first n rank-one terms (all retained ones by default)."""
        n = self.n_components if n is None else min(int(n), self.n_components)
        phi = self.eigenfunctions[:n]
        return (self.eigenvalues[:n, None, None] *
                phi[:, :, None] * phi[:, None, :]).sum(axis=0)


def trapezoid_weights(grid: GridSpec) -> np.ndarray:
    w = np.full(grid.n_points, grid.spacing)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def fpca(values: np.ndarray, grid: GridSpec,
         symmetric_tol: float = 1e-8) -> FpcaResult:
    """Decompose a covariance surface sampled on grid x grid."""
    values = np.asarray(values, dtype=float)
    G = grid.n_points
    if values.shape != (G, G):
        raise ShapeMismatch(f"surface shape {values.shape} does not match "
                            f"grid with {G} points")
    asym = np.max(np.abs(values - values.T))
    scale = np.max(np.abs(values))
    if asym > symmetric_tol * max(scale, 1.0):
        raise ShapeMismatch(f"surface is not symmetric (max gap {asym:.3g})")
    sym = 0.5 * (values + values.T)

    w = trapezoid_weights(grid)
    sqw = np.sqrt(w)
    core = sqw[:, None] * sym * sqw[None, :]
    raw, vecs = np.linalg.eigh(core)
    order = np.argsort(raw)[::-1]
    raw = raw[order]
    vecs = vecs[:, order]

    scale_spec = np.max(np.abs(raw)) if raw.size else 0.0
    keep = raw > _RELATIVE_RANK_TOL * scale_spec
    if scale_spec <= 0.0 or not np.any(keep):
        return FpcaResult(np.zeros(0), raw, np.zeros((0, G)), np.zeros(0),
                          grid, degenerate=True)
    lam = raw[keep]
    phi = (vecs[:, keep] / sqw[:, None]).T
    # sign convention: make each component integrate to a nonnegative value,
    # falling back to the first nonvanishing coordinate for odd components
    for r in range(phi.shape[0]):
        total = np.trapezoid(phi[r], grid.points)
        if abs(total) > 1e-10:
            if total < 0.0:
                phi[r] = -phi[r]
            continue
        nonzero = np.nonzero(np.abs(phi[r]) > 1e-10)[0]
        if nonzero.size and phi[r, nonzero[0]] < 0.0:
            phi[r] = -phi[r]
    fve = np.cumsum(lam) / lam.sum()
    return FpcaResult(lam, raw, phi, fve, grid, degenerate=False)


def write_fpca_csv(result: FpcaResult, path) -> str:
    """Header rows carry the spectrum; body rows carry the eigenfunctions."""
    path = Path(path)
    r = result.n_components
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eigenvalue"] + [f"{v:.10g}" for v in result.eigenvalues])
        w.writerow(["fve"] + [f"{v:.10g}" for v in result.fve])
        w.writerow(["t"] + [f"phi{j + 1}" for j in range(r)])
        for i, t in enumerate(result.grid.points):
            w.writerow([f"{t:.10g}"] +
                       [f"{result.eigenfunctions[j, i]:.10g}" for j in range(r)])
    return str(path)
