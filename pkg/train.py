#!/usr/bin/env python3
"""
train.py - VMC training loop

This module handles:
- Building the cell, moire geometry, Hamiltonian and ansatz from a RunConfig
- Batched walker evaluation: O rows and local-energy parts for every walker
- Warmup with step-size adaptation, then SPRING steps on fresh sweeps at the
  frozen warmup step size
- The append-only training log and periodic checkpoints
- NaN recovery (restore the last checkpoint and halve eta_0 once) and the
  flagged-sample abort
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from ansatz import Ansatz, build_ansatz, init_params, make_log_psi
from checkpoint import CheckpointData, CheckpointError, checkpoint_path, load_checkpoint, save_checkpoint
from config import RunConfig, config_to_dict
from derivatives import make_log_derivatives
from hamiltonian import HamiltonianParams, LocalEnergyParts, make_local_energy
from lattice import MoireGeometry, SimulationCell, build_cell, moire_geometry, wrap_positions
from networks import NetworkShape
from optimizer import SpringState, build_batch, energy_gradient, init_spring_state, lr_schedule, spring_update
from sampler import (
    AcceptanceStats,
    WalkerState,
    adapt_step,
    default_tau,
    init_state,
    init_walkers,
    make_mala_step,
    make_sweep,
)

jax.config.update("jax_enable_x64", True)

TRAINING_LOG_HEADER = (
    "step", "energy_mean", "energy_se", "var_EL", "acceptance_hmean",
    "tau", "eta", "grad_norm", "dtheta_norm", "n_flagged",
)
ADAPT_EVERY = 10
WALKER_CHUNK = 256
REVALIDATE_TOLERANCE = 1e-8


class NumericalError(RuntimeError):
    """Training cannot continue: repeated NaN parameters or too many flagged samples."""


class System(NamedTuple):
    cell: SimulationCell
    geometry: MoireGeometry
    hamiltonian: HamiltonianParams
    ansatz: Ansatz


def build_system(config: RunConfig) -> System:
    c, h, a = config.cell, config.hamiltonian, config.ansatz
    cell = build_cell(c.shape, c.n_cells_x, c.n_cells_y, c.r_s, c.nu_m, c.n_up, c.n_down)
    phi = float(np.deg2rad(h.phi_degrees))
    geometry = moire_geometry(cell, phi)
    hamiltonian = HamiltonianParams(
        v_m_over_w=h.v_m_over_w,
        r_s=h.r_s if h.r_s is not None else cell.r_s,
        ewald_alpha=h.ewald_alpha,
        ewald_rmax=h.ewald_rmax,
        ewald_kmax=h.ewald_kmax,
        softening=h.softening_am * cell.moire_constant,
        phi=phi,
    )
    network = NetworkShape(
        n_layers=a.n_layers,
        attention_width=a.attention_width,
        message_width=a.message_width,
        one_body_width=a.one_body_width,
        one_body_depth=a.one_body_depth,
        pair_width=a.pair_width,
        pair_depth=a.pair_depth,
    )
    ansatz = build_ansatz(
        cell,
        mode=a.mode,
        n_planewaves=a.n_planewaves,
        network=network,
        n_orb=a.n_orb,
        use_backflow=a.backflow,
        use_neural_jastrow=a.neural_jastrow,
        use_cck=a.cck,
        cusp_strength=0.0 if hamiltonian.softening > 0 else hamiltonian.r_s,
        jastrow_widths=a.jastrow_widths,
        backflow_widths=a.backflow_widths,
    )
    return System(cell=cell, geometry=geometry, hamiltonian=hamiltonian, ansatz=ansatz)


# --- walkers -----------------------------------------------------------------

def make_flat_log_abs(ansatz: Ansatz, unravel: Callable) -> Callable:
    """log|psi|(flat params, positions) for the sampler."""
    log_fn = make_log_psi(ansatz)
    return lambda flat, positions: log_fn(unravel(flat), positions).log_abs


def make_sampler(system: System, unravel: Callable, proposals_per_sweep: int) -> tuple[Callable, Callable]:
    """(jitted sweep, log_abs_fn) over flat parameters."""
    log_abs_fn = make_flat_log_abs(system.ansatz, unravel)
    step = make_mala_step(log_abs_fn, wrap_fn=lambda x: wrap_positions(system.cell, x))
    return jax.jit(make_sweep(step, proposals_per_sweep)), log_abs_fn


def make_walker_evaluator(system: System, unravel: Callable, with_gradients: bool = True,
                          chunk: int = WALKER_CHUNK) -> Callable:
    """
    evaluate(flat, positions (W, N, 2)) -> (O rows (W, P) or None, LocalEnergyParts of (W,)).

    Walkers are processed in chunks to bound the memory of the Laplacian.
    """
    derivatives = make_log_derivatives(system.ansatz)
    local_energy = make_local_energy(system.cell, system.geometry, system.hamiltonian)

    def one(flat, x):
        d = derivatives(unravel(flat), x)
        parts = local_energy(x, d.pos_grad, d.laplacian_sum)
        return (d.param_grad if with_gradients else None), parts

    batched = jax.jit(jax.vmap(one, in_axes=(None, 0)))

    def evaluate(flat, positions):
        rows, parts = [], []
        for start in range(0, positions.shape[0], chunk):
            o, p = batched(flat, positions[start:start + chunk])
            rows.append(o)
            parts.append(p)
        merged = LocalEnergyParts(*[jnp.concatenate([p[k] for p in parts]) for k in range(len(LocalEnergyParts._fields))])
        return (jnp.concatenate(rows) if with_gradients else None), merged

    return evaluate


def reset_stats(state: WalkerState) -> WalkerState:
    return state._replace(stats=AcceptanceStats.empty())


def tau_bound(system: System, configured: Optional[float]) -> float:
    return configured if configured is not None else system.cell.moire_constant**2


def warmup(sweep: Callable, flat, state: WalkerState, n_sweeps: int, tau_max: float,
           rate: float, verbose: bool = False) -> WalkerState:
    """Equilibrate walkers, adapting tau every ADAPT_EVERY sweeps."""
    for i in range(n_sweeps):
        state = sweep(flat, state)
        if (i + 1) % ADAPT_EVERY == 0 or i + 1 == n_sweeps:
            hmean = state.stats.harmonic_mean
            tau = adapt_step(state.stats, float(state.tau), tau_max, rate=rate)
            state = reset_stats(state)._replace(tau=jnp.asarray(tau))
            if verbose and (i + 1) % (10 * ADAPT_EVERY) == 0:
                print(f"  warmup {i + 1:5d}/{n_sweeps}  acceptance {hmean:.3f}  tau {tau:.4g}")
    return state


# --- statistics ----------------------------------------------------------------

def energy_statistics(energies: np.ndarray) -> tuple[float, float, float]:
    """(mean, standard error, variance) assuming one independent sample per walker."""
    energies = np.asarray(energies)
    if len(energies) < 2:
        return float(energies.mean()), float("nan"), float("nan")
    variance = float(energies.var(ddof=1))
    return float(energies.mean()), float(np.sqrt(variance / len(energies))), variance


class TrainingLog:
    """Append-only CSV with a fixed header."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(TRAINING_LOG_HEADER)

    def append(self, row: dict) -> None:
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([_format(row[key]) for key in TRAINING_LOG_HEADER])

    def truncate_after(self, step: int) -> None:
        """Drop rows beyond step (used when a restore rewinds the run)."""
        with open(self.path, newline="") as f:
            rows = list(csv.reader(f))
        kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) <= step]
        with open(self.path, "w", newline="") as f:
            csv.writer(f).writerows(kept)


def _format(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def read_training_log(path: Path) -> list:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


# --- training ----------------------------------------------------------------

@dataclass
class TrainState:
    """Mutable loop state; flat params are ordered as ravel_pytree(params)."""
    step: int
    flat: jax.Array
    spring: SpringState
    walkers: WalkerState
    nan_restarts: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class TrainResult:
    params: dict
    state: TrainState
    checkpoint: Optional[Path]


def fresh_state(config: RunConfig, system: System) -> tuple[TrainState, Callable]:
    """Initial parameters and walkers from the seed; returns (state, unravel)."""
    root = jax.random.PRNGKey(config.seed)
    params = init_params(jax.random.fold_in(root, 1), system.ansatz)
    flat, unravel = ravel_pytree(params)
    s = config.sampler
    positions, keys = init_walkers(system.cell, s.walkers, config.seed, s.init, system.geometry)
    tau = s.tau if s.tau is not None else default_tau(system.cell)
    walkers = init_state(make_flat_log_abs(system.ansatz, unravel), flat, positions, keys, tau)
    o = config.optimizer
    spring = init_spring_state(flat.shape[0], o.damping, o.momentum, o.learning_rate, o.decay)
    return TrainState(step=0, flat=flat, spring=spring, walkers=walkers), unravel


def params_template(config: RunConfig, system: System):
    """(template params, unravel) with the same structure every run of this config."""
    params = init_params(jax.random.PRNGKey(config.seed), system.ansatz)
    flat, unravel = ravel_pytree(params)
    return params, flat, unravel


def state_to_checkpoint(state: TrainState, config: RunConfig, system: System, code_version: str = "") -> CheckpointData:
    w = state.walkers
    return CheckpointData(
        step=state.step,
        params=np.asarray(state.flat),
        prev_update=np.asarray(state.spring.prev_update),
        damping=float(state.spring.damping),
        spring_step=int(state.spring.step),
        learning_rate=float(state.spring.learning_rate),
        positions=np.asarray(w.positions),
        log_abs=np.asarray(w.log_abs),
        drift=np.asarray(w.drift),
        keys=np.asarray(w.keys),
        tau=float(w.tau),
        acceptance=np.asarray([float(x) for x in w.stats]),
        minima_sites=np.asarray(system.geometry.minima_sites),
        ring_centers=np.asarray(system.geometry.ring_centers),
        config=config_to_dict(config),
        nan_restarts=state.nan_restarts,
        code_version=code_version,
    )


def state_from_checkpoint(data: CheckpointData, config: RunConfig, system: System,
                          unravel: Callable) -> TrainState:
    """Rebuild the loop state, revalidating the cached walker values."""
    n_params = params_template(config, system)[1].shape[0]
    if data.params.shape != (n_params,):
        raise CheckpointError(f"Checkpoint has {data.params.shape[0]} parameters, the ansatz has {n_params}")
    if data.positions.shape[1] != system.cell.n_electrons:
        raise CheckpointError(f"Checkpoint walkers hold {data.positions.shape[1]} electrons, the cell has {system.cell.n_electrons}")

    flat = jnp.asarray(data.params)
    log_abs_fn = make_flat_log_abs(system.ansatz, unravel)
    check = init_state(log_abs_fn, flat, data.positions, data.keys, data.tau)
    gap = np.max(np.abs(np.asarray(check.log_abs) - data.log_abs))
    if not gap <= REVALIDATE_TOLERANCE * max(1.0, float(np.max(np.abs(data.log_abs)))):
        raise CheckpointError(f"Cached walker amplitudes disagree with the parameters (max gap {gap:.3g})")

    walkers = WalkerState(
        positions=jnp.asarray(data.positions),
        log_abs=jnp.asarray(data.log_abs),
        drift=jnp.asarray(data.drift),
        keys=jnp.asarray(data.keys),
        tau=jnp.asarray(data.tau),
        stats=AcceptanceStats(*[jnp.asarray(x) for x in data.acceptance]),
    )
    o = config.optimizer
    spring = SpringState(
        prev_update=np.asarray(data.prev_update),
        step=data.spring_step,
        damping=data.damping,
        base_damping=o.damping,
        momentum=o.momentum,
        learning_rate=data.learning_rate,
        decay=o.decay,
    )
    return TrainState(step=data.step, flat=flat, spring=spring, walkers=walkers, nan_restarts=data.nan_restarts)


def train_step(
    state: TrainState,
    sweep: Callable,
    evaluate: Callable,
    n_electrons: int,
    max_flagged_fraction: float,
) -> dict:
    """One sweep at the frozen warmup tau, one SPRING update; mutates state and returns the log row."""
    walkers = sweep(state.flat, state.walkers)
    hmean = walkers.stats.harmonic_mean
    tau = float(walkers.tau)
    walkers = reset_stats(walkers)

    o_rows, parts = evaluate(state.flat, walkers.positions)
    per_electron = parts.total
    n_walkers = per_electron.shape[0]
    try:
        batch = build_batch(o_rows, per_electron * n_electrons)
    except ValueError as e:
        raise NumericalError(f"step {state.step}: {e}") from e
    if batch.n_flagged > max_flagged_fraction * n_walkers:
        raise NumericalError(
            f"step {state.step}: {batch.n_flagged}/{n_walkers} samples have non-finite energies or "
            f"log-derivatives (limit {max_flagged_fraction:.1%})"
        )

    finite = np.isfinite(np.asarray(per_electron))
    mean, se, variance = energy_statistics(np.asarray(per_electron.real)[finite])
    gradient = energy_gradient(batch)
    eta = lr_schedule(state.spring.step, state.spring.learning_rate, state.spring.decay)
    result = spring_update(state.spring, batch, state.flat)

    row = {
        "step": state.step,
        "energy_mean": mean,
        "energy_se": se,
        "var_EL": variance,
        "acceptance_hmean": hmean,
        "tau": tau,
        "eta": eta,
        "grad_norm": float(jnp.linalg.norm(gradient)),
        "dtheta_norm": float(np.linalg.norm(result.update)) if not result.skipped else 0.0,
        "n_flagged": batch.n_flagged,
    }
    state.flat = jnp.asarray(result.params)
    state.spring = result.state
    state.walkers = walkers
    state.step += 1
    return row


def train_loop(
    config: RunConfig,
    system: System,
    output_dir: Path,
    resume: Optional[Path] = None,
    code_version: str = "",
    verbose: bool = True,
    print_every: int = 10,
) -> TrainResult:
    """
    Warm up, then alternate sweeps and SPRING steps until optimizer.steps.

    Checkpoints go to output_dir/checkpoints every checkpoint_every steps and at
    the end; the log is output_dir/training_log.csv.
    """
    output_dir = Path(output_dir)
    ckpt_dir = output_dir / "checkpoints"
    _, _, unravel = params_template(config, system)
    sweep, _ = make_sampler(system, unravel, config.sampler.proposals_per_sweep)
    evaluate = make_walker_evaluator(system, unravel)
    tau_max = tau_bound(system, config.sampler.tau_max)
    log = TrainingLog(output_dir / "training_log.csv")

    if resume is not None:
        data = load_checkpoint(resume, expected_walkers=config.sampler.walkers)
        state = state_from_checkpoint(data, config, system, unravel)
        log.truncate_after(state.step - 1)
        last = Path(resume)
        if verbose:
            print(f"✓ Resumed from {resume} at step {state.step}")
    else:
        state, _ = fresh_state(config, system)
        if verbose:
            print(f"Warming up {config.sampler.walkers} walkers for {config.sampler.warmup_sweeps} sweeps...")
        state.walkers = warmup(sweep, state.flat, state.walkers, config.sampler.warmup_sweeps,
                               tau_max, config.sampler.adapt_rate, verbose)
        last = save_checkpoint(checkpoint_path(ckpt_dir, 0), state_to_checkpoint(state, config, system, code_version))

    n_electrons = system.cell.n_electrons
    opt = config.optimizer

    while state.step < opt.steps:
        row = train_step(state, sweep, evaluate, n_electrons, opt.max_flagged_fraction)
        if not bool(jnp.all(jnp.isfinite(state.flat))):
            if state.nan_restarts >= 1:
                raise NumericalError(f"step {row['step']}: parameters became NaN again after a restore")
            data = load_checkpoint(last)
            restarts = state.nan_restarts + 1
            state = state_from_checkpoint(data, config, system, unravel)
            state.nan_restarts = restarts
            state.spring = replace(state.spring, learning_rate=state.spring.learning_rate / 2)
            log.truncate_after(state.step - 1)
            print(f"  ✗ NaN parameters at step {row['step']}; restored step {state.step}, "
                  f"eta_0 halved to {state.spring.learning_rate:g}")
            continue

        log.append(row)
        state.history.append(row)
        if verbose and (row["step"] % print_every == 0 or state.step == opt.steps):
            print(f"  step {row['step']:6d}  E = {row['energy_mean']:.6f} ± {row['energy_se']:.6f} W  "
                  f"acc {row['acceptance_hmean']:.3f}  tau {row['tau']:.3g}  |dθ| {row['dtheta_norm']:.3g}")
        if state.step % config.checkpoint_every == 0 or state.step == opt.steps:
            last = save_checkpoint(checkpoint_path(ckpt_dir, state.step),
                                   state_to_checkpoint(state, config, system, code_version))

    if verbose:
        print(f"✓ Training finished at step {state.step}; last checkpoint {last}")
    return TrainResult(params=unravel(state.flat), state=state, checkpoint=last)
