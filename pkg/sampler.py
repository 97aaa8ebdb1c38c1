#!/usr/bin/env python3
"""
sampler.py - Metropolis-adjusted Langevin sampling of |psi|^2

    x' = x + tau grad log|psi(x)|^2 + sqrt(tau) eps

This module handles:
- Batched MALA proposals over independent walkers (one rng stream each)
- 20-proposal sweeps keeping only the last state
- Step-size adaptation towards a 65% harmonic-mean acceptance
- Walker initialization and snapshot export/import
"""

from pathlib import Path
from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from lattice import MoireGeometry, SimulationCell, wrap_positions

jax.config.update("jax_enable_x64", True)

TARGET_ACCEPTANCE = 0.65
ACCEPTANCE_FLOOR = 1e-6
MIN_PROPOSALS = 100
TAU_MIN = 1e-6
PROPOSALS_PER_SWEEP = 20
INIT_STRATEGIES = ("uniform", "minima")
SNAPSHOT_HEADER = "walker_id,electron_id,spin,x,y"


class AcceptanceStats(NamedTuple):
    """Running harmonic mean of per-proposal acceptance probabilities."""
    inverse_sum: jax.Array
    count: jax.Array
    accepted: jax.Array
    nonfinite: jax.Array

    @classmethod
    def empty(cls):
        zero = jnp.asarray(0.0)
        return cls(inverse_sum=zero, count=zero, accepted=zero, nonfinite=zero)

    @property
    def harmonic_mean(self) -> float:
        count = float(self.count)
        return count / float(self.inverse_sum) if count > 0 else float("nan")

    @property
    def acceptance_rate(self) -> float:
        count = float(self.count)
        return float(self.accepted) / count if count > 0 else float("nan")


class WalkerState(NamedTuple):
    """All walkers: positions (W, N, 2), cached log|psi| and drift, per-walker keys."""
    positions: jax.Array
    log_abs: jax.Array
    drift: jax.Array
    keys: jax.Array
    tau: jax.Array
    stats: AcceptanceStats


def _gaussian_log_density(target, origin, drift, tau):
    diff = (target - origin - tau * drift).reshape(target.shape[0], -1)
    return -jnp.sum(diff**2, axis=-1) / (2 * tau)


def make_value_and_drift(log_abs_fn: Callable) -> Callable:
    """(params, positions (W, N, 2)) -> (log|psi| (W,), grad log|psi|^2 (W, N, 2))."""
    value_and_grad = jax.value_and_grad(log_abs_fn, argnums=1)

    def fn(params, positions):
        value, grad = jax.vmap(value_and_grad, in_axes=(None, 0))(params, positions)
        return value, 2 * grad

    return fn


def make_mala_step(log_abs_fn: Callable, wrap_fn: Optional[Callable] = None) -> Callable:
    """
    Build step(params, state) -> (state, accept (W,), probability (W,)).

    log_abs_fn(params, positions) is log|psi| for one walker; the target is
    exp(2 log|psi|). wrap_fn maps accepted positions back into the cell.
    """
    value_and_drift = make_value_and_drift(log_abs_fn)

    def step(params, state: WalkerState):
        tau = state.tau
        split = jax.vmap(jax.random.split)(state.keys)
        keys, noise_keys = split[:, 0], split[:, 1]
        noise = jax.vmap(lambda k: jax.random.normal(k, state.positions.shape[1:]))(noise_keys)
        accept_keys = jax.vmap(jax.random.split)(keys)
        keys, uniform_keys = accept_keys[:, 0], accept_keys[:, 1]

        proposal = state.positions + tau * state.drift + jnp.sqrt(tau) * noise
        log_abs_new, drift_new = value_and_drift(params, proposal)

        forward = _gaussian_log_density(proposal, state.positions, state.drift, tau)
        backward = _gaussian_log_density(state.positions, proposal, drift_new, tau)
        log_ratio = 2 * (log_abs_new - state.log_abs) + backward - forward

        finite = jnp.isfinite(log_ratio) & jnp.all(jnp.isfinite(drift_new.reshape(len(proposal), -1)), axis=-1)
        probability = jnp.where(finite, jnp.exp(jnp.minimum(jnp.where(finite, log_ratio, 0.0), 0.0)), 0.0)
        uniform = jax.vmap(jax.random.uniform)(uniform_keys)
        accept = uniform < probability

        moved = wrap_fn(proposal) if wrap_fn is not None else proposal
        pick = accept[:, None, None]
        stats = AcceptanceStats(
            inverse_sum=state.stats.inverse_sum + jnp.sum(1.0 / jnp.maximum(probability, ACCEPTANCE_FLOOR)),
            count=state.stats.count + probability.shape[0],
            accepted=state.stats.accepted + jnp.sum(accept),
            nonfinite=state.stats.nonfinite + jnp.sum(~finite),
        )
        new_state = WalkerState(
            positions=jnp.where(pick, moved, state.positions),
            log_abs=jnp.where(accept, log_abs_new, state.log_abs),
            drift=jnp.where(pick, drift_new, state.drift),
            keys=keys,
            tau=tau,
            stats=stats,
        )
        return new_state, accept, probability

    return step


def make_sweep(step: Callable, n_props: int = PROPOSALS_PER_SWEEP) -> Callable:
    """sweep(params, state) -> state after n_props proposals; only the last state is kept."""

    def sweep(params, state: WalkerState) -> WalkerState:
        def body(carry, _):
            new_state, _, _ = step(params, carry)
            return new_state, None

        final, _ = jax.lax.scan(body, state, None, length=n_props)
        return final

    return sweep


def adapt_step(
    stats: AcceptanceStats,
    tau: float,
    tau_max: float,
    target: float = TARGET_ACCEPTANCE,
    rate: float = 1.0,
) -> float:
    """
    tau * exp(rate (h - target)) with h the harmonic-mean acceptance, clamped to
    [1e-6, tau_max]. Fewer than 100 recorded proposals leaves tau unchanged.
    """
    if float(stats.count) < MIN_PROPOSALS:
        return float(tau)
    new_tau = float(tau) * np.exp(rate * (stats.harmonic_mean - target))
    return float(np.clip(new_tau, TAU_MIN, tau_max))


def init_walkers(
    cell: SimulationCell,
    n_walkers: int,
    seed: int,
    strategy: str = "minima",
    geometry: Optional[MoireGeometry] = None,
) -> tuple[np.ndarray, jax.Array]:
    """
    Returns (positions (W, N, 2), per-walker keys (W, 2)).

    "uniform" draws every electron uniformly over the cell. "minima" puts each
    walker's electrons on distinct random moire minima with jitter below a_m/8.
    """
    if n_walkers < 1:
        raise ValueError(f"n_walkers must be at least 1, got {n_walkers}")
    if strategy not in INIT_STRATEGIES:
        raise ValueError(f"Unknown init strategy '{strategy}'. Choose from: {', '.join(INIT_STRATEGIES)}")

    rng = np.random.default_rng(seed)
    n = cell.n_electrons
    if strategy == "uniform":
        frac = rng.uniform(size=(n_walkers, n, 2))
        positions = frac @ cell.lattice_matrix
    else:
        if geometry is None:
            raise ValueError("minima initialization needs the moire geometry")
        sites = geometry.minima_sites
        if len(sites) < n:
            raise ValueError(f"{n} electrons do not fit on {len(sites)} minima")
        choice = np.stack([rng.choice(len(sites), size=n, replace=False) for _ in range(n_walkers)])
        radius = cell.moire_constant / 8 * np.sqrt(rng.uniform(size=(n_walkers, n)))
        angle = rng.uniform(0, 2 * np.pi, size=(n_walkers, n))
        jitter = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
        positions = wrap_positions(cell, sites[choice] + jitter)

    keys = jax.random.split(jax.random.PRNGKey(seed), n_walkers)
    return positions, keys


def init_state(
    log_abs_fn: Callable,
    params,
    positions,
    keys,
    tau: float,
) -> WalkerState:
    """Fill the cache for the given positions (also used to revalidate a restored state)."""
    positions = jnp.asarray(positions)
    log_abs, drift = make_value_and_drift(log_abs_fn)(params, positions)
    return WalkerState(
        positions=positions,
        log_abs=log_abs,
        drift=drift,
        keys=jnp.asarray(keys),
        tau=jnp.asarray(float(tau)),
        stats=AcceptanceStats.empty(),
    )


def default_tau(cell: SimulationCell) -> float:
    """Initial tau in a_B*^2; adaptation takes over from here."""
    return (cell.r_s / 4) ** 2


def write_snapshots(path: Path, positions, spins) -> None:
    """One row per electron: walker_id, electron_id, spin (+1/-1), x, y."""
    positions = np.asarray(positions)
    n_walkers, n_electrons, _ = positions.shape
    walker = np.repeat(np.arange(n_walkers), n_electrons)
    electron = np.tile(np.arange(n_electrons), n_walkers)
    spin = np.tile(np.asarray(spins, dtype=int), n_walkers)
    rows = np.column_stack([walker, electron, spin, positions.reshape(-1, 2)])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, rows, delimiter=",", header=SNAPSHOT_HEADER, comments="",
               fmt=["%d", "%d", "%d", "%.17g", "%.17g"])


def read_snapshots(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of write_snapshots: (positions (W, N, 2), spins (N,))."""
    with open(path) as f:
        header = f.readline().strip()
    if header != SNAPSHOT_HEADER:
        raise ValueError(f"{path}: expected header '{SNAPSHOT_HEADER}', found '{header}'")
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    walker = rows[:, 0].astype(int)
    electron = rows[:, 1].astype(int)
    n_walkers, n_electrons = walker.max() + 1, electron.max() + 1
    if len(rows) != n_walkers * n_electrons:
        raise ValueError(f"{path}: {len(rows)} rows do not form {n_walkers} complete walkers")
    positions = np.empty((n_walkers, n_electrons, 2))
    positions[walker, electron] = rows[:, 3:5]
    spins = np.empty(n_electrons, dtype=int)
    spins[electron] = rows[:, 2].astype(int)
    return positions, spins
