"""Kernel families, evaluation grids, data blocks, and local least squares.

Everything downstream is built from the weighted design sums accumulated
here: 2x2 systems for curve smoothing, 3x3 for surface smoothing and 4x4
for the local-cubic curvature pilot.  The sums are plain additive arrays,
which is what makes block-by-block merging possible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import InvalidBandwidth, ShapeMismatch

#: Grid points whose summed kernel mass falls below this are flagged as
#: having no data in the window.
DEGENERATE_THRESHOLD = 1e-12

#: Default scale of the stabilizing ridge: lambda = scale * trace(P) / dim.
DEFAULT_RIDGE_SCALE = 1e-9

#: Chunk length for accumulating design sums; bounds transient memory.
_CHUNK = 8192


def _epanechnikov(u: np.ndarray) -> np.ndarray:
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _epanechnikov_cdf(u: np.ndarray) -> np.ndarray:
    v = np.clip(u, -1.0, 1.0)
    return 0.5 + 0.75 * v - 0.25 * v**3


def _quartic(u: np.ndarray) -> np.ndarray:
    s = 1.0 - u * u
    return np.where(np.abs(u) <= 1.0, 0.9375 * s * s, 0.0)


def _quartic_cdf(u: np.ndarray) -> np.ndarray:
    v = np.clip(u, -1.0, 1.0)
    return 0.5 + 0.9375 * (v - 2.0 * v**3 / 3.0 + v**5 / 5.0)


def _triweight(u: np.ndarray) -> np.ndarray:
    s = 1.0 - u * u
    return np.where(np.abs(u) <= 1.0, 1.09375 * s * s * s, 0.0)


def _triweight_cdf(u: np.ndarray) -> np.ndarray:
    v = np.clip(u, -1.0, 1.0)
    return 0.5 + 1.09375 * (v - v**3 + 0.6 * v**5 - v**7 / 7.0)


# family -> (weight, cdf, second moment alpha, roughness R = int W^2)
_FAMILIES: dict[str, tuple[Callable, Callable, float, float]] = {
    "epanechnikov": (_epanechnikov, _epanechnikov_cdf, 1.0 / 5.0, 3.0 / 5.0),
    "quartic": (_quartic, _quartic_cdf, 1.0 / 7.0, 5.0 / 7.0),
    "triweight": (_triweight, _triweight_cdf, 1.0 / 9.0, 350.0 / 429.0),
}


@dataclass(frozen=True)
class Kernel:
    """A symmetric probability-density kernel supported on [-1, 1].

    ``alpha`` is the second moment and ``rfactor`` the roughness
    ``int W(u)^2 du``; both enter the plug-in bandwidth rule.
    """

    family: str
    alpha: float
    rfactor: float

    def weight(self, u) -> np.ndarray:
        return _FAMILIES[self.family][0](np.asarray(u, dtype=float))

    def cdf(self, u) -> np.ndarray:
        """Integral of the kernel from -inf to u (flat outside [-1, 1])."""
        return _FAMILIES[self.family][1](np.asarray(u, dtype=float))


def make_kernel(family: str = "epanechnikov") -> Kernel:
    """Build a kernel and verify its moment constants by quadrature."""
    if family not in _FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}; "
                         f"choose from {sorted(_FAMILIES)}")
    weight, _, alpha, rfactor = _FAMILIES[family]
    mass = quad(weight, -1.0, 1.0)[0]
    if abs(mass - 1.0) > 1e-10:
        raise ValueError(f"kernel {family!r} does not integrate to 1: {mass}")
    m2 = quad(lambda u: u * u * weight(u), -1.0, 1.0)[0]
    rr = quad(lambda u: weight(u) ** 2, -1.0, 1.0)[0]
    if abs(m2 - alpha) > 1e-12 or abs(rr - rfactor) > 1e-12:
        raise ValueError(f"kernel {family!r} moment table is inconsistent")
    return Kernel(family, alpha, rfactor)


def kernel_weight(kernel: Kernel, u) -> np.ndarray:
    """Evaluate the kernel weight W(u); zero outside [-1, 1]."""
    return kernel.weight(u)


@dataclass(frozen=True)
class GridSpec:
    """Uniform evaluation grid on [lo, hi]."""

    lo: float = 0.0
    hi: float = 1.0
    n_points: int = 101

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.hi > self.lo):
            raise ValueError("grid needs finite lo < hi")
        if self.n_points < 2:
            raise ValueError("grid needs at least 2 points")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class Subject:
    """One subject's irregular measurements: y[i] observed at times[i]."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ShapeMismatch("subject times and values must be equal-length 1-d arrays")
        if self.times.size == 0:
            raise ShapeMismatch("subject must have at least one measurement")

    @property
    def m(self) -> int:
        return self.times.size


@dataclass
class Block:
    """A batch of subjects arriving together in the stream."""

    block_id: int
    subjects: list[Subject]
    _pooled: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.subjects:
            raise ShapeMismatch("block must contain at least one subject")

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """All measurements pooled and sorted by (time, value).

        Sorting fixes the summation order, so permuting subjects or
        measurements cannot change any downstream result.
        """
        if self._pooled is None:
            t = np.concatenate([s.times for s in self.subjects])
            y = np.concatenate([s.values for s in self.subjects])
            order = np.lexsort((y, t))
            self._pooled = (t[order], y[order])
        return self._pooled


def observation_counts(block: Block) -> tuple[np.ndarray, int]:
    """Falling-factorial measurement counts (s_1..s_4) and subject count.

    s_j sums m(m-1)...(m-j+1) over subjects; s_1 counts measurements and
    s_2 counts ordered within-subject pairs.
    """
    s = np.zeros(4, dtype=np.int64)
    for subj in block.subjects:
        m = subj.m
        prod = 1
        for j in range(4):
            prod *= m - j
            if prod <= 0:
                break
            s[j] += prod
    return s, block.n_subjects


@dataclass
class Stats1D:
    """Additive local-linear design sums on a curve grid: P (G,2,2), q (G,2)."""

    p: np.ndarray
    q: np.ndarray

    def __add__(self, other: "Stats1D") -> "Stats1D":
        return Stats1D(self.p + other.p, self.q + other.q)

    @classmethod
    def zeros(cls, n: int) -> "Stats1D":
        return cls(np.zeros((n, 2, 2)), np.zeros((n, 2)))


@dataclass
class Stats2D:
    """Additive local-linear design sums on a surface grid: P (G,G,3,3), q (G,G,3)."""

    p: np.ndarray
    q: np.ndarray

    def __add__(self, other: "Stats2D") -> "Stats2D":
        return Stats2D(self.p + other.p, self.q + other.q)

    @classmethod
    def zeros(cls, ns: int, nt: int) -> "Stats2D":
        return cls(np.zeros((ns, nt, 3, 3)), np.zeros((ns, nt, 3)))


@dataclass
class StatsCubic:
    """Additive local-cubic design sums, used by the curvature pilot."""

    p: np.ndarray
    q: np.ndarray

    def __add__(self, other: "StatsCubic") -> "StatsCubic":
        return StatsCubic(self.p + other.p, self.q + other.q)

    @classmethod
    def zeros(cls, n: int) -> "StatsCubic":
        return cls(np.zeros((n, 4, 4)), np.zeros((n, 4)))


def _check_bandwidth(h: float) -> float:
    h = float(h)
    if not np.isfinite(h) or h <= 0.0:
        raise InvalidBandwidth(f"bandwidth must be positive and finite, got {h}")
    return h


def _design_sums_1d(t: np.ndarray, resp: np.ndarray, h: float, pts: np.ndarray,
                    kernel: Kernel, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate sum_i w_i * dt_i^(j+k) and sum_i w_i * dt_i^j * resp_i.

    dt = t_i - grid point, w = W(dt/h)/h.  Returns P of shape
    (G, degree+1, degree+1) and q of shape (G, degree+1).
    """
    dim = degree + 1
    g = pts.size
    mom = np.zeros((2 * degree + 1, g))
    rmom = np.zeros((dim, g))
    for start in range(0, t.size, _CHUNK):
        tc = t[start:start + _CHUNK]
        rc = resp[start:start + _CHUNK]
        dt = tc[:, None] - pts[None, :]
        w = kernel.weight(dt / h) / h
        cur = w
        mom[0] += cur.sum(axis=0)
        for j in range(1, 2 * degree + 1):
            cur = cur * dt
            mom[j] += cur.sum(axis=0)
        cur = w * rc[:, None]
        rmom[0] += cur.sum(axis=0)
        for j in range(1, dim):
            cur = cur * dt
            rmom[j] += cur.sum(axis=0)
    p = np.empty((g, dim, dim))
    for i in range(dim):
        for j in range(dim):
            p[:, i, j] = mom[i + j]
    return p, np.ascontiguousarray(rmom.T)


def _flatten_responses(block: Block, responses: Sequence[np.ndarray]
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Pool per-subject responses alongside times, in canonical sort order."""
    if len(responses) != block.n_subjects:
        raise ShapeMismatch("one response array per subject is required")
    parts_t, parts_r = [], []
    for subj, r in zip(block.subjects, responses):
        r = np.asarray(r, dtype=float)
        if r.shape != subj.times.shape:
            raise ShapeMismatch("response array must match the subject's layout")
        parts_t.append(subj.times)
        parts_r.append(r)
    t = np.concatenate(parts_t)
    r = np.concatenate(parts_r)
    order = np.lexsort((r, t))
    return t[order], r[order]


def mean_substats(block: Block, h: float, grid: GridSpec, kernel: Kernel) -> Stats1D:
    """Local-linear design sums of one block's raw measurements."""
    h = _check_bandwidth(h)
    t, y = block.pooled()
    p, q = _design_sums_1d(t, y, h, grid.points, kernel, degree=1)
    return Stats1D(p, q)


def response_substats(block: Block, responses: Sequence[np.ndarray], h: float,
                      grid: GridSpec, kernel: Kernel) -> Stats1D:
    """Local-linear design sums with caller-supplied responses."""
    h = _check_bandwidth(h)
    t, r = _flatten_responses(block, responses)
    p, q = _design_sums_1d(t, r, h, grid.points, kernel, degree=1)
    return Stats1D(p, q)


def cubic_substats(block: Block, responses: Sequence[np.ndarray], h: float,
                   grid: GridSpec, kernel: Kernel) -> StatsCubic:
    """Local-cubic design sums; the quadratic coefficient estimates curvature."""
    h = _check_bandwidth(h)
    t, r = _flatten_responses(block, responses)
    p, q = _design_sums_1d(t, r, h, grid.points, kernel, degree=3)
    return StatsCubic(p, q)


def build_pairs(block: Block, residuals: Sequence[np.ndarray]
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All ordered within-subject pairs (j1 != j2) of centered measurements.

    Returns times (t1, t2) and the residual product c = e_{j1} * e_{j2},
    lexicographically sorted so the accumulation order is canonical.
    Subjects with a single measurement contribute nothing.
    """
    if len(residuals) != block.n_subjects:
        raise ShapeMismatch("one residual array per subject is required")
    parts = []
    for subj, e in zip(block.subjects, residuals):
        e = np.asarray(e, dtype=float)
        if e.shape != subj.times.shape:
            raise ShapeMismatch("residual array must match the subject's layout")
        m = subj.m
        if m < 2:
            continue
        j1, j2 = np.nonzero(~np.eye(m, dtype=bool))
        parts.append((subj.times[j1], subj.times[j2], e[j1] * e[j2]))
    if not parts:
        empty = np.empty(0)
        return empty, empty, empty
    t1 = np.concatenate([p[0] for p in parts])
    t2 = np.concatenate([p[1] for p in parts])
    c = np.concatenate([p[2] for p in parts])
    order = np.lexsort((c, t2, t1))
    return t1[order], t2[order], c[order]


def pair_design_sums(t1: np.ndarray, t2: np.ndarray, c: np.ndarray, h: float,
                     s_pts: np.ndarray, t_pts: np.ndarray, kernel: Kernel
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Surface-smoother design sums over measurement pairs.

    Each pair contributes weight W((t1-s)/h)/h * W((t2-t)/h)/h with design
    (1, t1-s, t2-t) and response c.  The nine distinct sums are assembled
    from a single stacked matrix product per chunk, which keeps the hot
    loop inside BLAS.
    """
    h = _check_bandwidth(h)
    gs, gt = s_pts.size, t_pts.size
    m = np.zeros((5 * gs, 3 * gt))
    for start in range(0, t1.size, _CHUNK):
        x1 = t1[start:start + _CHUNK]
        x2 = t2[start:start + _CHUNK]
        cc = c[start:start + _CHUNK, None]
        d1 = x1[:, None] - s_pts[None, :]
        w1 = kernel.weight(d1 / h) / h
        w1d = w1 * d1
        a = np.concatenate([w1, w1d, w1d * d1, w1 * cc, w1d * cc], axis=1)
        d2 = x2[:, None] - t_pts[None, :]
        w2 = kernel.weight(d2 / h) / h
        w2d = w2 * d2
        b = np.concatenate([w2, w2d, w2d * d2], axis=1)
        m += a.T @ b
    blk = lambda i, j: m[i * gs:(i + 1) * gs, j * gt:(j + 1) * gt]
    p = np.empty((gs, gt, 3, 3))
    p[..., 0, 0] = blk(0, 0)
    p[..., 0, 1] = p[..., 1, 0] = blk(1, 0)
    p[..., 0, 2] = p[..., 2, 0] = blk(0, 1)
    p[..., 1, 1] = blk(2, 0)
    p[..., 1, 2] = p[..., 2, 1] = blk(1, 1)
    p[..., 2, 2] = blk(0, 2)
    q = np.empty((gs, gt, 3))
    q[..., 0] = blk(3, 0)
    q[..., 1] = blk(4, 0)
    q[..., 2] = blk(3, 1)
    return p, q


def cov_substats(block: Block, residuals: Sequence[np.ndarray], h: float,
                 grid: GridSpec, kernel: Kernel) -> Stats2D:
    """Surface design sums of one block's within-subject residual products."""
    t1, t2, c = build_pairs(block, residuals)
    pts = grid.points
    p, q = pair_design_sums(t1, t2, c, h, pts, pts, kernel)
    return Stats2D(p, q)


@dataclass(frozen=True)
class LocalFit:
    """Solution of one local weighted least-squares system."""

    value: float
    coeffs: np.ndarray


def solve_grid(p: np.ndarray, q: np.ndarray,
               ridge_scale: float = DEFAULT_RIDGE_SCALE
               ) -> tuple[np.ndarray, np.ndarray]:
    """Solve stacked local systems P x = q with a vanishing ridge.

    A ridge lambda = ridge_scale * trace(P)/dim makes every system solvable
    (P is positive semidefinite), and one refinement step removes the
    first-order shrinkage the ridge would otherwise introduce, so exact
    polynomial reproduction survives even at boundary grid points.

    Returns the coefficient stack and a validity mask; entries where the
    kernel window holds no data are zeroed and masked out.
    """
    dim = p.shape[-1]
    valid = p[..., 0, 0] > DEGENERATE_THRESHOLD
    tr = np.trace(p, axis1=-2, axis2=-1)
    lam = ridge_scale * tr / dim
    eye = np.eye(dim)
    a = p + lam[..., None, None] * eye
    a = np.where(valid[..., None, None], a, eye)
    rhs = np.where(valid[..., None], q, 0.0)
    x = np.linalg.solve(a, rhs[..., None])[..., 0]
    resid = rhs - np.einsum("...ij,...j->...i", p, x)
    x = x + np.linalg.solve(a, resid[..., None])[..., 0]
    return x, valid


def solve_local(p: np.ndarray, q: np.ndarray,
                ridge_scale: float = DEFAULT_RIDGE_SCALE) -> LocalFit | None:
    """Solve a single local system; None signals a degenerate (empty) window."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (q.size, q.size):
        raise ShapeMismatch(f"P must be square and match q, got {p.shape} vs {q.shape}")
    x, valid = solve_grid(p[None], q[None], ridge_scale)
    if not valid[0]:
        return None
    return LocalFit(value=float(x[0, 0]), coeffs=x[0])
