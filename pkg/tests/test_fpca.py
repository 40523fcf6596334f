"""Eigendecomposition of gridded covariance surfaces."""

from __future__ import annotations

import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from streamfda.errors import ShapeMismatch
from streamfda.fpca import fpca, trapezoid_weights, write_fpca_csv
from streamfda.kernels import GridSpec
from streamfda.simulate import true_cov

GRID = GridSpec(0.0, 1.0, 101)


def _quad_normalized(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    w = trapezoid_weights(grid)
    return values / np.sqrt(values @ (w * values))


class TestWeights:
    def test_trapezoid_weights(self):
        w = trapezoid_weights(GRID)
        assert w.sum() == pytest.approx(GRID.width, rel=1e-12)
        assert w[0] == pytest.approx(0.5 * GRID.spacing)
        assert w[50] == pytest.approx(GRID.spacing)


class TestRankOne:
    def test_recovers_component_exactly(self):
        phi = _quad_normalized(np.sqrt(2) * np.cos(np.pi * GRID.points), GRID)
        surface = 0.7 * np.outer(phi, phi)
        res = fpca(surface, GRID)
        assert res.n_components == 1
        assert res.eigenvalues[0] == pytest.approx(0.7, rel=1e-12)
        assert_allclose(res.fve, [1.0], atol=1e-14)
        assert_allclose(np.abs(res.eigenfunctions[0]), np.abs(phi), atol=1e-10)

    def test_sign_convention(self):
        """Zero-integral components are pinned by their first coordinate."""
        phi = _quad_normalized(np.sqrt(2) * np.cos(np.pi * GRID.points), GRID)
        for sign in (1.0, -1.0):
            res = fpca(0.3 * np.outer(sign * phi, sign * phi), GRID)
            assert res.eigenfunctions[0][0] > 0.0
        bump = _quad_normalized(np.ones(GRID.n_points), GRID)
        res = fpca(np.outer(-bump, -bump), GRID)
        assert np.trapezoid(res.eigenfunctions[0], GRID.points) > 0.0

    def test_negative_surface_degenerate(self):
        phi = _quad_normalized(np.ones(GRID.n_points), GRID)
        res = fpca(-np.outer(phi, phi), GRID)
        assert res.degenerate
        assert res.n_components == 0
        assert_allclose(res.reconstruct(), 0.0)


@pytest.fixture(scope="module")
def decomposition():
    pts = GRID.points
    ss, tt = np.meshgrid(pts, pts, indexing="ij")
    return fpca(true_cov(ss, tt), GRID)


class TestModelSurface:
    def test_leading_eigenvalue(self, decomposition):
        assert decomposition.eigenvalues[0] == pytest.approx(0.4, rel=0.02)

    def test_leading_eigenfunction_constant(self, decomposition):
        phi1 = decomposition.eigenfunctions[0]
        assert np.max(np.abs(phi1 - 1.0)) < 0.05

    def test_spectrum_decays_like_model(self, decomposition):
        lam = decomposition.eigenvalues
        want = 0.4 * np.arange(1, 6, dtype=float) ** -2
        assert_allclose(lam[:5], want, rtol=0.05)

    def test_quadrature_orthonormality(self, decomposition):
        w = trapezoid_weights(GRID)
        phi = decomposition.eigenfunctions
        gram = (phi * w) @ phi.T
        assert_allclose(gram, np.eye(len(phi)), atol=1e-8)

    def test_reconstruction(self, decomposition):
        pts = GRID.points
        ss, tt = np.meshgrid(pts, pts, indexing="ij")
        full = decomposition.reconstruct()
        assert np.max(np.abs(full - true_cov(ss, tt))) < 1e-6
        partial = decomposition.reconstruct(1)
        lam1 = decomposition.eigenvalues[0]
        phi1 = decomposition.eigenfunctions[0]
        assert_allclose(partial, lam1 * np.outer(phi1, phi1), atol=1e-12)

    def test_fve_monotone_to_one(self, decomposition):
        fve = decomposition.fve
        assert np.all(np.diff(fve) >= 0)
        assert fve[-1] == pytest.approx(1.0, abs=1e-12)


class TestValidation:
    def test_rejects_wrong_shape(self):
        with pytest.raises(ShapeMismatch):
            fpca(np.zeros((5, 7)), GRID)
        with pytest.raises(ShapeMismatch):
            fpca(np.zeros((5, 5)), GRID)

    def test_rejects_asymmetric(self):
        vals = np.zeros((GRID.n_points, GRID.n_points))
        vals[3, 9] = 1.0
        with pytest.raises(ShapeMismatch):
            fpca(vals, GRID)

    def test_zero_surface_degenerate(self):
        res = fpca(np.zeros((GRID.n_points, GRID.n_points)), GRID)
        assert res.degenerate
        assert res.eigenvalues.size == 0

    def test_csv_layout(self, tmp_path):
        phi = _quad_normalized(np.ones(GRID.n_points), GRID)
        res = fpca(0.5 * np.outer(phi, phi), GRID)
        path = tmp_path / "eig.csv"
        write_fpca_csv(res, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "eigenvalue"
        assert float(rows[0][1]) == pytest.approx(0.5, rel=1e-9)
        assert rows[1][0] == "fve"
        assert rows[2] == ["t", "phi1"]
        assert len(rows) == 3 + GRID.n_points
        assert float(rows[3][0]) == 0.0
