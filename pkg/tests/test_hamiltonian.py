"""
Unit tests for hamiltonian.py - Ewald sum, softened interaction, local energy

Run with: uv run pytest tests/ -v
"""

import jax.numpy as jnp
import numpy as np
import pytest
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from hamiltonian import (
    EwaldSum,
    HamiltonianParams,
    ewald_ee_energy,
    local_energy,
    make_ee_energy,
    moire_potential_value,
    resolve_ewald,
)
from lattice import build_cell, debug_cell, moire_geometry

# Madelung constant of the square Wigner lattice: E/N = -3.900265 / (2 L) for side L
SQUARE_MADELUNG = -3.900265


@pytest.fixture
def cell():
    return build_cell("triangular", 2, 2, 2.0, 0.5, 2, 2)


class TestEwaldSum:
    """Tests for the 2D Ewald sum"""

    @pytest.mark.parametrize("side", [1.0, 3.5])
    def test_square_madelung(self, side):
        square = debug_cell(np.eye(2) * side, 1, 0)
        params = resolve_ewald(square, HamiltonianParams(v_m_over_w=0.0, r_s=1.0))
        ewald = EwaldSum(square, params.ewald_alpha, params.ewald_rmax, params.ewald_kmax)
        assert ewald.xi * side == pytest.approx(SQUARE_MADELUNG, abs=1e-5)

    def test_alpha_independence(self, cell):
        rng = np.random.default_rng(0)
        positions = rng.uniform(size=(4, 2)) @ cell.lattice_matrix
        energies = []
        for alpha in (0.5, 1.0, 2.0):
            params = HamiltonianParams(v_m_over_w=0.0, r_s=1.0, ewald_alpha=alpha / np.sqrt(cell.area))
            energies.append(ewald_ee_energy(cell, positions, params))
        assert np.allclose(energies, energies[0], rtol=1e-8)

    def test_translation_invariance(self, cell):
        rng = np.random.default_rng(1)
        positions = rng.uniform(size=(4, 2)) @ cell.lattice_matrix
        params = HamiltonianParams(v_m_over_w=0.0, r_s=1.0)
        e0 = ewald_ee_energy(cell, positions, params)
        e1 = ewald_ee_energy(cell, positions + np.array([3.1, -7.4]), params)
        e2 = ewald_ee_energy(cell, positions + cell.lattice_matrix[0], params)
        assert e1 == pytest.approx(e0, rel=1e-10)
        assert e2 == pytest.approx(e0, rel=1e-10)

    def test_single_electron_is_madelung(self):
        square = debug_cell(np.eye(2) * 2.0, 1, 0)
        params = HamiltonianParams(v_m_over_w=0.0, r_s=1.0)
        assert ewald_ee_energy(square, np.zeros((1, 2)), params) == pytest.approx(SQUARE_MADELUNG / 4, abs=1e-5)

    def test_coincident_electrons_rejected(self, cell):
        positions = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 3.0], [4.0, 1.0]])
        with pytest.raises(ValueError, match="Coincident"):
            ewald_ee_energy(cell, positions, HamiltonianParams(v_m_over_w=0.0, r_s=1.0))

    def test_prefactor_is_linear(self, cell):
        rng = np.random.default_rng(2)
        positions = rng.uniform(size=(4, 2)) @ cell.lattice_matrix
        e1 = ewald_ee_energy(cell, positions, HamiltonianParams(v_m_over_w=0.0, r_s=1.0))
        e3 = ewald_ee_energy(cell, positions, HamiltonianParams(v_m_over_w=0.0, r_s=3.0))
        assert e3 == pytest.approx(3 * e1, rel=1e-12)


class TestSoftenedInteraction:
    """Tests for the softened minimum-image interaction"""

    def test_two_electrons(self):
        positions = np.array([[0.0, 0.0], [1.5, 0.0]])
        two = build_cell("triangular", 2, 2, 2.0, 0.25, 1, 1)
        softening = 0.3
        energy_fn, madelung = make_ee_energy(two, HamiltonianParams(v_m_over_w=0.0, r_s=2.0, softening=softening))
        expected = 2.0 * two.r_s / np.sqrt(1.5**2 + softening**2)
        assert float(energy_fn(jnp.asarray(positions))) == pytest.approx(expected)
        assert madelung == 0.0

    def test_coincident_allowed_when_softened(self, cell):
        positions = np.zeros((4, 2))
        energy = ewald_ee_energy(cell, positions, HamiltonianParams(v_m_over_w=0.0, r_s=1.0, softening=0.5))
        assert np.isfinite(energy)


class TestLocalEnergy:
    """Tests for local-energy assembly"""

    def test_moire_part_at_minima(self, cell):
        geometry = moire_geometry(cell)
        params = HamiltonianParams(v_m_over_w=2.0, r_s=0.0)
        positions = geometry.minima_sites[:4]
        parts = local_energy(cell, geometry, params, positions, np.zeros((4, 2)), 0.0)
        assert float(parts.potential_moire) == pytest.approx(-6.0)
        assert float(parts.kinetic) == pytest.approx(0.0)

    def test_kinetic_of_plane_wave(self, cell):
        # psi = exp(i k.x) for one coordinate: grad log psi = i k, laplacian = 0
        geometry = moire_geometry(cell)
        params = HamiltonianParams(v_m_over_w=0.0, r_s=0.0)
        k = 0.3
        grad = np.zeros((4, 2), dtype=complex)
        grad[0, 0] = 1j * k
        parts = local_energy(cell, geometry, params, geometry.minima_sites[:4], grad, 0.0 + 0.0j)
        assert complex(parts.kinetic) == pytest.approx(0.5 * cell.r_s**2 * k**2 / 4)

    def test_parts_are_per_electron(self, cell):
        geometry = moire_geometry(cell)
        params = HamiltonianParams(v_m_over_w=0.0, r_s=1.0)
        positions = geometry.minima_sites[:4]
        parts = local_energy(cell, geometry, params, positions, np.zeros((4, 2)), 0.0)
        total = ewald_ee_energy(cell, positions, params)
        assert float(parts.potential_ee + parts.madelung) * 4 == pytest.approx(total, rel=1e-10)

    def test_moire_potential_sign(self, cell):
        geometry = moire_geometry(cell)
        params = HamiltonianParams(v_m_over_w=1.0, r_s=0.0)
        values = moire_potential_value(geometry, geometry.ring_centers, params)
        assert np.allclose(values, 6.0)
