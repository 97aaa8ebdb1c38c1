"""
Unit tests for sampler.py - MALA moves, step-size adaptation, walker setup

Run with: uv run pytest tests/ -v
"""

import tempfile

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from pathlib import Path

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from lattice import build_cell, minimum_image, moire_geometry, wrap_positions
from sampler import (
    AcceptanceStats,
    adapt_step,
    init_state,
    init_walkers,
    make_mala_step,
    make_sweep,
    read_snapshots,
    write_snapshots,
)


def gaussian_log_abs(params, positions):
    """|psi|^2 is a unit-variance Gaussian scaled by params (a scalar width)."""
    return -jnp.sum(positions**2) / (4 * params**2)


@pytest.fixture
def cell():
    return build_cell("triangular", 2, 2, 10.0, 0.25, 1, 1)


class TestMala:
    """Tests for the MALA kernel"""

    def test_samples_gaussian(self):
        width = 1.5
        n_walkers = 2000
        positions = np.zeros((n_walkers, 1, 2))
        keys = jax.random.split(jax.random.PRNGKey(0), n_walkers)
        state = init_state(gaussian_log_abs, width, positions, keys, tau=0.5)
        sweep = jax.jit(make_sweep(make_mala_step(gaussian_log_abs), 20))
        for _ in range(10):
            state = sweep(width, state)
        x = np.asarray(state.positions).reshape(-1, 2)
        assert np.allclose(x.mean(axis=0), 0.0, atol=0.15)
        assert np.allclose(x.var(axis=0), width**2, rtol=0.1)

    def test_adapted_acceptance_near_target(self):
        n_walkers = 500
        keys = jax.random.split(jax.random.PRNGKey(4), n_walkers)
        state = init_state(gaussian_log_abs, 1.0, np.zeros((n_walkers, 1, 2)), keys, tau=0.01)
        sweep = jax.jit(make_sweep(make_mala_step(gaussian_log_abs), 20))
        for _ in range(60):
            state = sweep(1.0, state)
            tau = adapt_step(state.stats, float(state.tau), 100.0)
            state = state._replace(tau=jnp.asarray(tau), stats=AcceptanceStats.empty())
        state = sweep(1.0, state)
        assert 0.60 <= state.stats.harmonic_mean <= 0.70

    def test_cache_stays_consistent(self):
        positions = np.random.default_rng(0).normal(size=(16, 2, 2))
        keys = jax.random.split(jax.random.PRNGKey(1), 16)
        state = init_state(gaussian_log_abs, 1.0, positions, keys, tau=0.3)
        step = jax.jit(make_mala_step(gaussian_log_abs))
        for _ in range(5):
            state, _, _ = step(1.0, state)
        fresh = init_state(gaussian_log_abs, 1.0, state.positions, state.keys, tau=0.3)
        assert np.allclose(state.log_abs, fresh.log_abs)
        assert np.allclose(state.drift, fresh.drift)

    def test_acceptance_statistics(self):
        keys = jax.random.split(jax.random.PRNGKey(2), 8)
        state = init_state(gaussian_log_abs, 1.0, np.zeros((8, 1, 2)), keys, tau=0.1)
        state, accept, probability = make_mala_step(gaussian_log_abs)(1.0, state)
        assert float(state.stats.count) == 8
        assert float(state.stats.accepted) == float(jnp.sum(accept))
        assert np.all((np.asarray(probability) >= 0) & (np.asarray(probability) <= 1))

    def test_nonfinite_proposals_rejected(self):
        def broken(params, positions):
            return jnp.where(positions[0, 0] > 0, jnp.nan, -jnp.sum(positions**2))

        keys = jax.random.split(jax.random.PRNGKey(3), 64)
        state = init_state(broken, None, -np.ones((64, 1, 2)), keys, tau=2.0)
        new_state, accept, _ = make_mala_step(broken)(None, state)
        moved = np.asarray(new_state.positions)[np.asarray(accept)]
        assert np.all(moved[:, 0, 0] <= 0)
        assert float(new_state.stats.nonfinite) > 0

    def test_wrap_keeps_walkers_in_cell(self, cell):
        geometry = moire_geometry(cell)
        positions, keys = init_walkers(cell, 32, seed=0, strategy="minima", geometry=geometry)
        flat_log_abs = lambda params, x: 0.0 * jnp.sum(x)
        step = make_mala_step(flat_log_abs, wrap_fn=lambda x: wrap_positions(cell, x))
        state = init_state(flat_log_abs, None, positions, keys, tau=25.0)
        for _ in range(5):
            state, _, _ = step(None, state)
        frac = np.asarray(state.positions) @ np.linalg.inv(cell.lattice_matrix)
        assert np.all(frac > -1e-9) and np.all(frac < 1 + 1e-9)


class TestAdaptStep:
    """Tests for adapt_step"""

    def stats(self, hmean, count=200):
        return AcceptanceStats(
            inverse_sum=jnp.asarray(count / hmean), count=jnp.asarray(float(count)),
            accepted=jnp.asarray(0.0), nonfinite=jnp.asarray(0.0),
        )

    def test_grows_when_accepting_too_much(self):
        assert adapt_step(self.stats(0.9), 1.0, 10.0) == pytest.approx(np.exp(0.25))

    def test_shrinks_when_accepting_too_little(self):
        assert adapt_step(self.stats(0.2), 1.0, 10.0) < 1.0

    def test_unchanged_at_target(self):
        assert adapt_step(self.stats(0.65), 0.7, 10.0) == pytest.approx(0.7)

    def test_clamped(self):
        assert adapt_step(self.stats(1.0), 9.9, 10.0) == 10.0
        assert adapt_step(self.stats(1e-6), 1.5e-6, 10.0) == pytest.approx(1e-6)

    def test_few_proposals_leave_tau(self):
        assert adapt_step(self.stats(0.99, count=50), 0.3, 10.0) == 0.3

    def test_harmonic_mean(self):
        stats = AcceptanceStats(inverse_sum=jnp.asarray(1 / 0.5 + 1 / 1.0), count=jnp.asarray(2.0),
                                accepted=jnp.asarray(1.0), nonfinite=jnp.asarray(0.0))
        assert stats.harmonic_mean == pytest.approx(2 / 3)
        assert np.isnan(AcceptanceStats.empty().harmonic_mean)


class TestInitWalkers:
    """Tests for init_walkers"""

    def test_minima_strategy(self, cell):
        geometry = moire_geometry(cell)
        positions, keys = init_walkers(cell, 10, seed=1, strategy="minima", geometry=geometry)
        assert positions.shape == (10, cell.n_electrons, 2)
        assert keys.shape[0] == 10
        d = np.asarray(minimum_image(cell, positions[:, :, None, :] - geometry.minima_sites[None, None, :, :]))
        dist = np.linalg.norm(d, axis=-1)
        assert np.all(dist.min(axis=-1) < cell.moire_constant / 8 + 1e-12)
        sites = dist.argmin(axis=-1)
        assert all(len(set(row)) == cell.n_electrons for row in sites)

    def test_uniform_strategy(self, cell):
        positions, _ = init_walkers(cell, 50, seed=2, strategy="uniform")
        frac = positions @ np.linalg.inv(cell.lattice_matrix)
        assert np.all(frac > -1e-9) and np.all(frac < 1 + 1e-9)

    def test_reproducible(self, cell):
        a, _ = init_walkers(cell, 5, seed=7, strategy="uniform")
        b, _ = init_walkers(cell, 5, seed=7, strategy="uniform")
        assert np.array_equal(a, b)

    def test_minima_need_geometry(self, cell):
        with pytest.raises(ValueError, match="geometry"):
            init_walkers(cell, 5, seed=0, strategy="minima")

    def test_unknown_strategy(self, cell):
        with pytest.raises(ValueError, match="Unknown init strategy"):
            init_walkers(cell, 5, seed=0, strategy="lattice")


class TestSnapshots:
    """Tests for snapshot export"""

    def test_write_and_read(self, cell):
        positions = np.random.default_rng(0).uniform(size=(3, cell.n_electrons, 2))
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "snapshot_000000.csv"
            write_snapshots(path, positions, cell.spins)
            loaded, spins = read_snapshots(path)
        assert np.array_equal(loaded, positions)
        assert list(spins) == [1, -1]

    def test_bad_header(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.csv"
            path.write_text("a,b,c\n1,2,3\n")
            with pytest.raises(ValueError, match="header"):
                read_snapshots(path)
