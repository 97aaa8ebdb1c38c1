#!/usr/bin/env python3
"""
optimizer.py - SPRING natural-gradient updates solved in sample space

    dtheta_t = (S + lambda I)^-1 (g + lambda mu dtheta_{t-1}),   theta_{t+1} = theta_t - eta_t dtheta_t

This module handles:
- Assembling centered log-derivative batches and dropping flagged samples
- The energy gradient g = 2 Re <O* (E_L - <E_L>)>
- The minSR solve through the (2 N_s) x (2 N_s) kernel T T^T + lambda I
- Inverse-time learning-rate decay
"""

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import cho_factor, cho_solve

jax.config.update("jax_enable_x64", True)

DAMPING_BOOST = 10.0


@dataclass(frozen=True)
class SpringState:
    """Optimizer memory; damping may sit above base_damping after a failed solve."""
    prev_update: np.ndarray
    step: int = 0
    damping: float = 1e-3
    base_damping: float = 1e-3
    momentum: float = 0.9
    learning_rate: float = 0.1
    decay: float = 1000.0

    def __post_init__(self):
        if not self.damping > 0:
            raise ValueError(f"damping must be positive, got {self.damping}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def init_spring_state(n_params: int, damping=1e-3, momentum=0.9, learning_rate=0.1, decay=1000.0) -> SpringState:
    return SpringState(
        prev_update=np.zeros(n_params),
        damping=float(damping),
        base_damping=float(damping),
        momentum=float(momentum),
        learning_rate=float(learning_rate),
        decay=float(decay),
    )


class EnergyGradientBatch(NamedTuple):
    """Centered O rows, local energies and normalized weights of the unflagged samples."""
    centered_o: jax.Array      # complex (S, P)
    local_energies: jax.Array  # complex (S,)
    weights: jax.Array         # (S,), sums to 1
    n_flagged: int


class SpringResult(NamedTuple):
    update: np.ndarray
    params: np.ndarray
    state: SpringState
    skipped: bool


def build_batch(o_rows, local_energies, weights=None) -> EnergyGradientBatch:
    """Drop samples with a non-finite O row or local energy, normalize weights, center O."""
    o_rows = jnp.asarray(o_rows)
    local_energies = jnp.asarray(local_energies)
    weights = jnp.ones(len(local_energies)) if weights is None else jnp.asarray(weights, dtype=float)

    keep = np.asarray(jnp.isfinite(local_energies) & jnp.all(jnp.isfinite(o_rows), axis=1))
    n_flagged = int(np.sum(~keep))
    if keep.sum() < 2:
        raise ValueError(f"Need at least 2 unflagged samples, got {int(keep.sum())} ({n_flagged} flagged)")

    o_rows, local_energies, weights = o_rows[keep], local_energies[keep], weights[keep]
    weights = weights / jnp.sum(weights)
    centered = o_rows - jnp.sum(weights[:, None] * o_rows, axis=0)
    return EnergyGradientBatch(centered_o=centered, local_energies=local_energies, weights=weights, n_flagged=n_flagged)


def _sample_space(batch: EnergyGradientBatch):
    """T = sqrt(w) [Re O; Im O] and eps = 2 sqrt(w) [Re e; Im e], so S = T^T T and g = T^T eps."""
    root = jnp.sqrt(batch.weights)
    o = root[:, None] * batch.centered_o
    e = batch.local_energies - jnp.sum(batch.weights * batch.local_energies)
    t = jnp.concatenate([o.real, o.imag], axis=0)
    eps = 2 * jnp.concatenate([root * e.real, root * e.imag])
    return t, eps


def energy_gradient(batch: EnergyGradientBatch) -> jax.Array:
    """g = 2 Re sum_s w_s conj(O_s - <O>) (E_s - <E>)"""
    t, eps = _sample_space(batch)
    return t.T @ eps


def spring_update(state: SpringState, batch: EnergyGradientBatch, params) -> SpringResult:
    """
    dtheta = mu p + T^T (T T^T + lambda I)^-1 (eps - T mu p), p = dtheta_{t-1}

    which equals (S + lambda I)^-1 (g + lambda mu p). A non-finite solve skips the
    step and multiplies lambda by 10; successful steps relax lambda back to its base.
    """
    t, eps = _sample_space(batch)
    prev = jnp.asarray(state.prev_update)
    momentum_term = state.momentum * prev
    kernel = t @ t.T + state.damping * jnp.eye(t.shape[0])
    factor = cho_factor(kernel, lower=True)
    update = momentum_term + t.T @ cho_solve(factor, eps - t @ momentum_term)

    if not bool(jnp.all(jnp.isfinite(update))):
        new_state = replace(state, damping=state.damping * DAMPING_BOOST)
        return SpringResult(update=np.asarray(prev), params=np.asarray(params), state=new_state, skipped=True)

    eta = lr_schedule(state.step, state.learning_rate, state.decay)
    new_params = np.asarray(params) - eta * np.asarray(update)
    new_state = replace(
        state,
        prev_update=np.asarray(update),
        step=state.step + 1,
        damping=max(state.base_damping, state.damping / DAMPING_BOOST),
    )
    return SpringResult(update=np.asarray(update), params=new_params, state=new_state, skipped=False)


def lr_schedule(step: int, eta0: float, decay: float) -> float:
    """eta_0 / (1 + step / decay)"""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    return eta0 / (1.0 + step / decay)


def fisher_matrix(batch: EnergyGradientBatch) -> np.ndarray:
    """Dense S = Re <O* O> for small problems and diagnostics."""
    t, _ = _sample_space(batch)
    return np.asarray(t.T @ t)


def dense_update(batch: EnergyGradientBatch, prev_update, damping: float, momentum: float,
                 gradient: Optional[np.ndarray] = None) -> np.ndarray:
    """Parameter-space solve (S + lambda I)^-1 (g + lambda mu p)."""
    s = fisher_matrix(batch)
    g = np.asarray(energy_gradient(batch)) if gradient is None else gradient
    rhs = g + damping * momentum * np.asarray(prev_update)
    return np.linalg.solve(s + damping * np.eye(len(s)), rhs)
