"""
Unit tests for derivatives.py - parameter and position derivatives of log psi

Run with: uv run pytest tests/ -v
"""

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from ansatz import build_ansatz, free_fermion_energy, init_params, log_psi
from derivatives import (
    fd_oracle,
    flatten_params,
    make_param_gradient,
    make_position_derivatives,
    param_gradient,
    position_derivatives,
)
from hamiltonian import HamiltonianParams, local_energy
from lattice import build_cell, moire_geometry
from networks import NetworkShape

SMALL_NETWORK = NetworkShape(n_layers=1, attention_width=4, message_width=4, one_body_width=4,
                             one_body_depth=1, pair_width=4, pair_depth=1)


@pytest.fixture
def cell():
    return build_cell("triangular", 2, 2, 2.0, 0.25, 1, 1)


@pytest.fixture
def ansatz(cell):
    return build_ansatz(cell, network=SMALL_NETWORK, jastrow_widths=(4, 1), backflow_widths=(4, 2))


@pytest.fixture
def params(ansatz):
    params = init_params(jax.random.PRNGKey(0), ansatz)
    leaves, treedef = jax.tree_util.tree_flatten(params)
    keys = jax.random.split(jax.random.PRNGKey(1), len(leaves))
    leaves = [leaf + 0.2 * jax.random.normal(k, jnp.shape(leaf)) for leaf, k in zip(leaves, keys)]
    return jax.tree_util.tree_unflatten(treedef, leaves)


@pytest.fixture
def positions(cell):
    return np.array([[1.3, 2.1], [4.2, 0.7]])


class TestPositionDerivatives:
    """Tests for position gradients and the Laplacian"""

    def test_gradient_matches_finite_differences(self, ansatz, params, positions):
        grad, _ = position_derivatives(ansatz, params, positions)
        log_abs = lambda x: float(log_psi(ansatz, params, x.reshape(-1, 2)).log_abs)
        expected = fd_oracle(log_abs, positions, "gradient", step=1e-3)
        assert np.allclose(np.asarray(grad.real).reshape(-1), expected, atol=1e-7)

    def test_phase_gradient_matches_finite_differences(self, ansatz, params, positions):
        grad, _ = position_derivatives(ansatz, params, positions)
        phase0 = float(log_psi(ansatz, params, positions).phase)
        # measured relative to the base point so the branch cut never falls inside the stencil
        phase = lambda x: float(np.angle(np.exp(1j * (float(log_psi(ansatz, params, x.reshape(-1, 2)).phase) - phase0))))
        expected = fd_oracle(phase, positions, "gradient", step=1e-3)
        assert np.allclose(np.asarray(grad.imag).reshape(-1), expected, atol=1e-7)

    def test_laplacian_matches_finite_differences(self, ansatz, params, positions):
        _, laplacian = position_derivatives(ansatz, params, positions)
        log_abs = lambda x: float(log_psi(ansatz, params, x.reshape(-1, 2)).log_abs)
        expected = fd_oracle(log_abs, positions, "laplacian", step=1e-3)
        assert float(laplacian.real) == pytest.approx(expected, rel=1e-5, abs=1e-6)

    def test_free_fermion_kinetic_energy(self):
        # closed shell of 7 plane waves per spin, no network: an exact eigenstate
        cell = build_cell("triangular", 2, 2, 1.5, 1.75, 7, 7)
        plain = build_ansatz(cell, use_backflow=False, use_neural_jastrow=False, use_cck=False)
        params = init_params(jax.random.PRNGKey(0), plain)
        geometry = moire_geometry(cell)
        hamiltonian = HamiltonianParams(v_m_over_w=0.0, r_s=0.0)
        rng = np.random.default_rng(5)
        for _ in range(3):
            x = rng.uniform(size=(cell.n_electrons, 2)) @ cell.lattice_matrix
            grad, laplacian = position_derivatives(plain, params, x)
            parts = local_energy(cell, geometry, hamiltonian, x, grad, laplacian)
            expected = free_fermion_energy(plain) / cell.n_electrons
            assert complex(parts.kinetic) == pytest.approx(expected, rel=1e-8, abs=1e-10)


class TestParamGradient:
    """Tests for the parameter log-derivatives O"""

    def test_matches_finite_differences(self, ansatz, params, positions):
        flat, unravel = flatten_params(params)
        o = np.asarray(param_gradient(ansatz, params, positions))
        assert o.shape == flat.shape
        log_abs = lambda v: float(log_psi(ansatz, unravel(jnp.asarray(v)), positions).log_abs)
        indices = list(np.random.default_rng(0).choice(len(flat), size=12, replace=False))
        expected = fd_oracle(log_abs, np.asarray(flat), "gradient", step=1e-3, indices=indices)
        assert np.allclose(o.real[indices], expected, atol=1e-7)

    def test_cck_gradient_is_real(self, ansatz, params, positions):
        flat, _ = flatten_params(params)
        o = np.asarray(param_gradient(ansatz, params, positions))
        marker = jax.tree_util.tree_map(jnp.zeros_like, params)
        marker["cck"]["like"] = jnp.asarray(1.0)
        marker["cck"]["unlike"] = jnp.asarray(1.0)
        index = np.flatnonzero(np.asarray(flatten_params(marker)[0]))
        assert np.allclose(o.imag[index], 0.0)


class TestFdOracle:
    """Tests for fd_oracle"""

    def test_polynomial(self):
        fn = lambda x: float(x[0] ** 3 + 2 * x[0] * x[1] ** 2)
        point = np.array([0.7, -1.2])
        grad = fd_oracle(fn, point, "gradient", step=1e-2)
        assert np.allclose(grad, [3 * 0.7**2 + 2 * 1.44, 4 * 0.7 * -1.2], atol=1e-9)
        assert fd_oracle(fn, point, "laplacian", step=1e-2) == pytest.approx(6 * 0.7 + 4 * 0.7, rel=1e-8)

    def test_step_range(self):
        with pytest.raises(ValueError, match="step"):
            fd_oracle(lambda x: 0.0, np.zeros(2), step=1.0)

    def test_unknown_derivative(self):
        with pytest.raises(ValueError, match="Unknown derivative"):
            fd_oracle(lambda x: 0.0, np.zeros(2), which="hessian")


class TestOracleAgreement:
    """Seeded sweeps of O and the Laplacian against fd_oracle on a 2+2 cell with message passing"""

    N_CONFIGURATIONS = 20

    @pytest.fixture(params=["slater", "bcs"])
    def setup(self, request):
        cell = build_cell("triangular", 2, 2, 2.0, 0.5, 2, 2)
        ansatz = build_ansatz(cell, mode=request.param, network=SMALL_NETWORK,
                              jastrow_widths=(4, 1), backflow_widths=(4, 2))
        params = init_params(jax.random.PRNGKey(7), ansatz)
        leaves, treedef = jax.tree_util.tree_flatten(params)
        keys = jax.random.split(jax.random.PRNGKey(8), len(leaves))
        leaves = [leaf + 0.2 * jax.random.normal(k, jnp.shape(leaf)) for leaf, k in zip(leaves, keys)]
        return cell, ansatz, jax.tree_util.tree_unflatten(treedef, leaves)

    def configurations(self, cell):
        rng = np.random.default_rng(11)
        for _ in range(self.N_CONFIGURATIONS):
            yield rng.uniform(size=(cell.n_electrons, 2)) @ cell.lattice_matrix, rng

    def test_param_gradient_real_and_imaginary(self, setup):
        cell, ansatz, params = setup
        flat, unravel = flatten_params(params)
        log_fn = jax.jit(lambda v, x: log_psi(ansatz, unravel(v), x))
        o_row = jax.jit(make_param_gradient(ansatz))
        for x, rng in self.configurations(cell):
            o = np.asarray(o_row(params, jnp.asarray(x)))
            base = log_fn(flat, x)
            log_abs = lambda v: float(log_fn(jnp.asarray(v), x).log_abs)
            phase = lambda v: float(np.angle(np.exp(1j * (float(log_fn(jnp.asarray(v), x).phase) - float(base.phase)))))
            indices = list(rng.choice(len(flat), size=3, replace=False))
            expected_real = fd_oracle(log_abs, np.asarray(flat), "gradient", step=1e-3, indices=indices)
            expected_imag = fd_oracle(phase, np.asarray(flat), "gradient", step=1e-3, indices=indices)
            assert np.allclose(o.real[indices], expected_real, rtol=1e-5, atol=1e-8)
            assert np.allclose(o.imag[indices], expected_imag, rtol=1e-5, atol=1e-8)

    def test_laplacian(self, setup):
        cell, ansatz, params = setup
        derivatives = jax.jit(make_position_derivatives(ansatz))
        log_fn = jax.jit(lambda x: log_psi(ansatz, params, x.reshape(-1, 2)).log_abs)
        for x, _ in self.configurations(cell):
            _, laplacian = derivatives(params, jnp.asarray(x))
            expected = fd_oracle(lambda v: float(log_fn(jnp.asarray(v))), x, "laplacian", step=1e-3)
            assert float(laplacian.real) == pytest.approx(expected, rel=1e-5, abs=1e-6)
