"""
Unit tests for lattice.py - supercell, moire geometry, minimum image

Run with: uv run pytest tests/ -v
"""

import numpy as np
import pytest
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from lattice import (
    build_cell,
    debug_cell,
    find_minima,
    minimum_image,
    moire_constant,
    moire_geometry,
    moire_lambda,
    reciprocal_vectors,
    voronoi_assign,
    wrap_positions,
)


@pytest.fixture
def cell():
    return build_cell("triangular", 2, 2, 10.0, 0.25, 1, 1)


@pytest.fixture
def geometry(cell):
    return moire_geometry(cell)


class TestBuildCell:
    """Tests for build_cell"""

    def test_area_matches_density(self, cell):
        # one electron per pi r_s^2
        assert cell.area == pytest.approx(cell.n_electrons * np.pi * cell.r_s**2, rel=1e-12)

    def test_moire_constant(self):
        a_m = moire_constant(10.0, 0.25)
        assert a_m == pytest.approx(10.0 * np.sqrt(np.pi / np.sqrt(3)))

    def test_rectangular_aspect(self):
        rect = build_cell("rectangular", 2, 2, 5.0, 0.25, 1, 1)
        lengths = np.linalg.norm(rect.lattice_matrix, axis=1)
        assert np.dot(rect.lattice_matrix[0], rect.lattice_matrix[1]) == pytest.approx(0.0, abs=1e-9)
        assert lengths[1] / lengths[0] == pytest.approx(np.sqrt(3) / 2)

    def test_rectangular_needs_even_rows(self):
        with pytest.raises(ValueError, match="even"):
            build_cell("rectangular", 2, 3, 5.0, 0.5, 3, 3)

    def test_inconsistent_electron_count(self):
        with pytest.raises(ValueError, match="inconsistent"):
            build_cell("triangular", 2, 2, 10.0, 0.25, 2, 1)

    def test_unknown_shape(self):
        with pytest.raises(ValueError, match="Unknown cell shape"):
            build_cell("hexagonal", 2, 2, 10.0, 0.25, 1, 1)

    def test_spins_up_first(self):
        cell = build_cell("triangular", 2, 2, 10.0, 0.5, 3, 1)
        assert list(cell.spins) == [1, 1, 1, -1]


class TestReciprocalVectors:
    """Tests for reciprocal_vectors"""

    def test_sum_to_zero(self, cell):
        g = reciprocal_vectors(cell)
        assert np.allclose(g.sum(axis=0), 0.0, atol=1e-12)

    def test_dual_to_moire_lattice(self, cell):
        g = reciprocal_vectors(cell)
        phases = g @ cell.moire_matrix.T / (2 * np.pi)
        assert np.allclose(phases, np.round(phases), atol=1e-12)

    def test_length(self, cell):
        g = reciprocal_vectors(cell)
        expected = 4 * np.pi / (np.sqrt(3) * cell.moire_constant)
        assert np.allclose(np.linalg.norm(g, axis=1), expected)


class TestMoireGeometry:
    """Tests for minima sites and ring centres"""

    def test_site_counts(self, cell, geometry):
        assert len(geometry.minima_sites) == 2 * cell.n_cells
        assert len(geometry.ring_centers) == cell.n_cells

    def test_lambda_at_sites_and_centres(self, geometry):
        assert np.allclose(moire_lambda(geometry.minima_sites, geometry.g_vectors, geometry.phi), 3.0)
        assert np.allclose(moire_lambda(geometry.ring_centers, geometry.g_vectors, geometry.phi), -6.0)

    def test_sites_surround_centres(self, cell, geometry):
        d = np.asarray(minimum_image(cell, geometry.minima_sites[:, None, :] - geometry.ring_centers[None, :, :]))
        nearest = np.min(np.linalg.norm(d, axis=-1), axis=1)
        assert np.allclose(nearest, cell.moire_constant / np.sqrt(3))

    def test_sites_inside_cell(self, cell, geometry):
        frac = geometry.minima_sites @ np.linalg.inv(cell.lattice_matrix)
        assert np.all(frac >= -1e-12) and np.all(frac < 1)

    def test_non_honeycomb_phase_rejected(self, cell):
        with pytest.raises(ValueError, match="honeycomb"):
            find_minima(reciprocal_vectors(cell), 0.0, cell)

    def test_larger_cell(self):
        big = build_cell("triangular", 4, 4, 10.0, 0.25, 4, 4)
        geom = moire_geometry(big)
        assert len(geom.minima_sites) == 32
        assert len(geom.ring_centers) == 16


class TestMinimumImage:
    """Tests for minimum_image and wrap_positions"""

    def test_shortest_image(self, cell):
        rng = np.random.default_rng(0)
        d = rng.uniform(-3, 3, size=(50, 2)) @ cell.lattice_matrix
        reduced = np.asarray(minimum_image(cell, d))
        shell = np.array([[i, j] for i in range(-3, 4) for j in range(-3, 4)]) @ cell.lattice_matrix
        for original, short in zip(d, reduced):
            candidates = np.linalg.norm(original + shell, axis=1)
            assert np.linalg.norm(short) == pytest.approx(candidates.min())

    def test_differs_by_lattice_vector(self, cell):
        d = np.array([[37.0, -12.0]])
        shift = (d - np.asarray(minimum_image(cell, d))) @ np.linalg.inv(cell.lattice_matrix)
        assert np.allclose(shift, np.round(shift))

    def test_skewed_cell(self):
        skew = debug_cell([[10.0, 0.0], [9.0, 1.0]], 1, 0)
        d = np.array([[0.5, 0.9]])
        assert np.linalg.norm(minimum_image(skew, d)) <= np.linalg.norm(d) + 1e-12

    def test_wrap_into_cell(self, cell):
        rng = np.random.default_rng(1)
        positions = rng.uniform(-100, 100, size=(20, 2))
        frac = wrap_positions(cell, positions) @ np.linalg.inv(cell.lattice_matrix)
        assert np.all(frac > -1e-9) and np.all(frac < 1 + 1e-9)


class TestVoronoi:
    """Tests for voronoi_assign"""

    def test_areas_sum_to_cell(self, cell, geometry):
        partition = voronoi_assign(geometry, cell, grid_resolution=32)
        assert partition.site_areas().sum() == pytest.approx(cell.area)

    def test_sites_get_equal_areas(self, cell, geometry):
        partition = voronoi_assign(geometry, cell, grid_resolution=48)
        areas = partition.site_areas()
        assert np.allclose(areas, cell.area / len(areas), rtol=0.05)

    def test_resolution_floor(self, cell, geometry):
        with pytest.raises(ValueError, match="at least 32"):
            voronoi_assign(geometry, cell, grid_resolution=16)
