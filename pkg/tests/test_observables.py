"""
Unit tests for observables.py - polarization, density, pair correlation, molecules

Run with: uv run pytest tests/ -v
"""

import csv
import tempfile

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from jax.flatten_util import ravel_pytree
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from ansatz import build_ansatz, init_params, log_psi
from lattice import build_cell, moire_geometry, voronoi_assign, wrap_positions
from observables import (
    DensityGrid,
    accumulate_density,
    complex_polarization,
    density_linecut,
    displacement_grid,
    dipole_statistics,
    molecular_localization,
    molecule_assignment,
    occupied_centres,
    occupied_sites,
    pair_angle_histogram,
    pair_angles,
    pair_correlation,
    polarization_vector,
    ring_superlattice_labels,
    spin_correlation_from_resolved,
    write_correlation_csv,
)
from sampler import AcceptanceStats, adapt_step, default_tau, init_state, init_walkers, make_mala_step, make_sweep


@pytest.fixture(scope="module")
def cell():
    # 4 molecules on the doubled ring superlattice at quarter filling
    return build_cell("triangular", 4, 4, 10.0, 0.25, 4, 4)


@pytest.fixture(scope="module")
def geometry(cell):
    return moire_geometry(cell)


def uniform_samples(cell, n_samples, seed=0):
    frac = np.random.default_rng(seed).uniform(size=(n_samples, cell.n_electrons, 2))
    return frac @ cell.lattice_matrix


def molecular_sample(cell, centres, offset):
    """Up electron at c + offset and down electron at c - offset on every ring."""
    return np.concatenate([centres + offset, centres - offset])


class TestPolarization:
    """Tests for complex_polarization"""

    def test_shortest_reciprocal_vector(self, cell):
        g = polarization_vector(cell)
        phases = cell.lattice_matrix @ g / (2 * np.pi)
        assert np.allclose(phases, np.round(phases))
        assert np.linalg.norm(g) == pytest.approx(4 * np.pi / (np.sqrt(3) * 4 * cell.moire_constant))

    def test_frozen_configuration(self, cell):
        sample = uniform_samples(cell, 1)
        result = complex_polarization(np.repeat(sample, 20, axis=0), cell)
        assert result.abs_z == pytest.approx(1.0)
        assert result.se_abs == pytest.approx(0.0, abs=1e-12)

    def test_uniform_samples_are_unpolarized(self, cell):
        result = complex_polarization(uniform_samples(cell, 4000, seed=1), cell)
        assert result.abs_z < 5 / np.sqrt(4000)

    def test_to_dict(self, cell):
        data = complex_polarization(uniform_samples(cell, 10), cell).to_dict()
        assert {"Z_re", "Z_im", "absZ", "se", "g_vector"} <= set(data)


class TestSampledPolarization:
    """|Z| of a plane-wave determinant sampled with MALA"""

    def test_metal_is_unpolarized(self):
        # closed shell of 7 plane waves per spin: |psi|^2 is invariant under rigid translations
        metal = build_cell("triangular", 2, 2, 1.5, 1.75, 7, 7)
        ansatz = build_ansatz(metal, use_backflow=False, use_neural_jastrow=False, use_cck=False)
        flat, unravel = ravel_pytree(init_params(jax.random.PRNGKey(0), ansatz))
        log_abs = lambda v, x: log_psi(ansatz, unravel(v), x).log_abs
        step = make_mala_step(log_abs, wrap_fn=lambda x: wrap_positions(metal, x))
        sweep = jax.jit(make_sweep(step, 10))
        positions, keys = init_walkers(metal, 512, seed=3, strategy="uniform")
        state = init_state(log_abs, flat, positions, keys, tau=default_tau(metal))
        for i in range(30):
            state = sweep(flat, state)
            if i % 5 == 4:
                tau = adapt_step(state.stats, float(state.tau), metal.moire_constant**2)
                state = state._replace(tau=jnp.asarray(tau), stats=AcceptanceStats.empty())

        result = complex_polarization(np.asarray(state.positions), metal)
        assert abs(result.z.real) < 4 * result.se_re
        assert abs(result.z.imag) < 4 * result.se_im
        assert result.abs_z < 0.2


class TestDensity:
    """Tests for density histograms and line cuts"""

    def test_normalization(self, cell):
        density = accumulate_density(uniform_samples(cell, 50), cell, resolution=8)
        rho_up, rho_down = density.rho(cell)
        area = density.bin_area(cell)
        assert rho_up.sum() * area == pytest.approx(cell.n_up)
        assert rho_down.sum() * area == pytest.approx(cell.n_down)

    def test_merge(self, cell):
        a = accumulate_density(uniform_samples(cell, 10, seed=1), cell, resolution=8)
        b = accumulate_density(uniform_samples(cell, 15, seed=2), cell, resolution=8)
        total = a.counts_up.sum() + b.counts_up.sum()
        merged = a.merge(b)
        assert merged.n_samples == 25
        assert merged.counts_up.sum() == total

    def test_merge_shape_mismatch(self, cell):
        with pytest.raises(ValueError, match="Cannot merge"):
            DensityGrid.empty(cell, 8).merge(DensityGrid.empty(cell, 16))

    def test_linecut_of_flat_density(self, cell, geometry):
        density = DensityGrid.empty(cell, 8)
        density.counts_up += 1.0
        density.n_samples = 1
        path = [geometry.minima_sites[0], geometry.ring_centers[3], [1.0, 2.0]]
        cut = density_linecut(density, cell, path, n_points=50)
        rho_up, _ = density.rho(cell)
        assert np.allclose(cut["rho"], rho_up[0, 0])
        assert np.allclose(cut["rho_spin"], rho_up[0, 0])
        assert cut["s"][0] == 0.0

    def test_linecut_needs_two_vertices(self, cell):
        with pytest.raises(ValueError, match="two"):
            density_linecut(DensityGrid.empty(cell, 8), cell, [[0.0, 0.0]])


class TestPairCorrelation:
    """Tests for pair_correlation"""

    def test_first_bin_is_origin(self, cell):
        assert np.allclose(displacement_grid(cell, 16)[0, 0], 0.0)

    def test_sum_rule(self, cell):
        pc = pair_correlation(uniform_samples(cell, 30), cell, n_bins=16)
        assert pc.sum_rule(cell, cell.n_electrons) == pytest.approx(-1.0)

    def test_sum_rule_with_missing_bins(self, cell):
        pc = pair_correlation(uniform_samples(cell, 1, seed=3), cell, n_bins=32)
        assert np.any(np.isnan(pc.g))
        assert pc.sum_rule(cell, cell.n_electrons) == pytest.approx(-1.0)

    def test_ideal_gas_baseline(self, cell):
        pc = pair_correlation(uniform_samples(cell, 2000, seed=4), cell, n_bins=8)
        assert pc.baseline == pytest.approx(1 - 1 / cell.n_electrons)
        assert np.median(pc.g) == pytest.approx(pc.baseline, rel=0.05)

    def test_spin_correlation_matches_resolved(self, cell):
        pc = pair_correlation(uniform_samples(cell, 40, seed=5), cell, n_bins=8)
        rebuilt = spin_correlation_from_resolved(pc, cell)
        assert np.allclose(rebuilt, np.nan_to_num(pc.g_s, nan=0.0))

    def test_missing_bins_written_empty(self, cell):
        pc = pair_correlation(uniform_samples(cell, 1, seed=6), cell, n_bins=32)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "pair_correlation.csv"
            write_correlation_csv(path, pc.displacements, pc.g, pc.g_s, pc.se_g)
            with open(path, newline="") as f:
                rows = list(csv.DictReader(f))
        assert len(rows) == 32 * 32
        assert any(row["g"] == "" for row in rows)
        assert all(row["dx"] != "" for row in rows)


class TestMolecularLocalization:
    """Tests for ring registrations and f_m"""

    def test_four_registrations(self, cell, geometry):
        labels = ring_superlattice_labels(geometry, cell)
        assert list(np.bincount(labels)) == [4, 4, 4, 4]

    def test_occupied_sites(self, cell, geometry):
        masks = [occupied_sites(geometry, cell, r) for r in range(4)]
        assert all(mask.sum() == 24 for mask in masks)
        # every minimum borders three rings of distinct registrations
        assert np.all(np.sum(masks, axis=0) == 3)

    def test_odd_tiling_rejected(self):
        odd = build_cell("triangular", 3, 3, 10.0, 0.5, 5, 4)
        with pytest.raises(ValueError, match="even tiling"):
            ring_superlattice_labels(moire_geometry(odd), odd)

    def test_perfect_molecular_density(self, cell, geometry):
        partition = voronoi_assign(geometry, cell, grid_resolution=32)
        areas = partition.site_areas()
        mask = occupied_sites(geometry, cell, 0)
        per_site = np.where(mask, 1 / 3, 0.0) / areas
        field = per_site[partition.site_assignment]
        result = molecular_localization(field, partition, geometry, cell)
        assert result.registration == 0
        assert result.f_o == pytest.approx(1 / 3)
        assert result.f_u == pytest.approx(0.0)
        assert result.f_m == pytest.approx(1.0)

    def test_uniform_density(self, cell, geometry):
        partition = voronoi_assign(geometry, cell, grid_resolution=32)
        field = np.full(partition.grid_shape, cell.n_electrons / cell.area)
        assert molecular_localization(field, partition, geometry, cell).f_m == pytest.approx(0.0, abs=0.05)


class TestMolecules:
    """Tests for molecule assignment and dipole statistics"""

    def test_assignment(self, cell, geometry):
        centres = occupied_centres(geometry, cell, 0)
        sample = molecular_sample(cell, centres, np.array([0.3, 0.0]) * cell.moire_constant)
        assignment = molecule_assignment(sample, cell, centres)
        assert assignment.valid
        assert list(assignment.up) == [0, 1, 2, 3]
        assert list(assignment.down) == [4, 5, 6, 7]

    def test_double_occupancy_is_invalid(self, cell, geometry):
        centres = occupied_centres(geometry, cell, 0)
        sample = molecular_sample(cell, centres, np.array([0.3, 0.0]) * cell.moire_constant)
        sample[1] = sample[0]
        assert not molecule_assignment(sample, cell, centres).valid

    def test_opposite_pair_angle(self, cell, geometry):
        centres = occupied_centres(geometry, cell, 0)
        sample = molecular_sample(cell, centres, np.array([0.2, 0.1]) * cell.moire_constant)
        angles = pair_angles(sample, cell, molecule_assignment(sample, cell, centres))
        assert np.allclose(angles, np.pi)
        hist = pair_angle_histogram(angles, 36)
        assert hist[18] == pytest.approx(1.0)

    def test_parallel_dipoles(self, cell, geometry):
        centres = occupied_centres(geometry, cell, 0)
        sample = molecular_sample(cell, centres, np.array([0.3, 0.0]) * cell.moire_constant)
        stats = dipole_statistics(sample[None], cell, centres)
        assert stats.validity_fraction == 1.0
        assert stats.delta_counts.sum() > 0
        assert stats.delta_histogram()[0] == pytest.approx(1.0)
        assert stats.n_degenerate == 0

    def test_degenerate_dipoles_counted(self, cell, geometry):
        centres = occupied_centres(geometry, cell, 0)
        sample = molecular_sample(cell, centres, np.zeros(2))
        stats = dipole_statistics(sample[None], cell, centres)
        assert stats.n_degenerate == 4
        assert stats.delta_counts.sum() == 0

    def test_invalid_snapshots_skipped(self, cell, geometry):
        centres = occupied_centres(geometry, cell, 0)
        good = molecular_sample(cell, centres, np.array([0.3, 0.0]) * cell.moire_constant)
        bad = good.copy()
        bad[1] = bad[0]
        stats = dipole_statistics(np.stack([good, bad]), cell, centres)
        assert stats.n_snapshots == 2
        assert stats.validity_fraction == 0.5
