#!/usr/bin/env python3
"""
derivatives.py - Exact derivatives of log psi for energies, sampling and SPRING

This module handles:
- Parameter log-derivatives O = d log psi / d theta over the flattened real
  parameter vector (complex parameters enter as separate Re/Im entries)
- Position gradients and the summed Laplacian of log psi (forward-over-reverse)
- Richardson-extrapolated central differences for testing the above
"""

from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from ansatz import Ansatz, make_log_psi

jax.config.update("jax_enable_x64", True)

FD_STEP_RANGE = (1e-6, 1e-2)


class LogDerivatives(NamedTuple):
    param_grad: jax.Array     # complex (n_params,)
    pos_grad: jax.Array       # complex (N, 2)
    laplacian_sum: jax.Array  # complex scalar


def make_param_gradient(ansatz: Ansatz) -> Callable:
    """(params, positions) -> complex O row, ordered as ravel_pytree(params)."""
    log_fn = make_log_psi(ansatz)

    def o_row(params, positions):
        grad_abs = jax.grad(lambda p: log_fn(p, positions).log_abs)(params)
        grad_phase = jax.grad(lambda p: log_fn(p, positions).phase)(params)
        return ravel_pytree(grad_abs)[0] + 1j * ravel_pytree(grad_phase)[0]

    return o_row


def make_position_derivatives(ansatz: Ansatz) -> Callable:
    """(params, positions) -> (pos_grad (N, 2) complex, laplacian_sum complex)."""
    return position_derivatives_of(make_log_psi(ansatz))


def position_derivatives_of(log_fn: Callable) -> Callable:
    """Position gradient and Laplacian for any (params, positions) -> LogAmplitude."""

    def complex_grad(params, flat):
        grad_abs = jax.grad(lambda x: log_fn(params, x.reshape(-1, 2)).log_abs)(flat)
        grad_phase = jax.grad(lambda x: log_fn(params, x.reshape(-1, 2)).phase)(flat)
        return grad_abs + 1j * grad_phase

    def derivatives(params, positions):
        flat = jnp.asarray(positions).reshape(-1)
        n = flat.shape[0]
        eye = jnp.eye(n, dtype=flat.dtype)
        grad_fn = lambda x: complex_grad(params, x)

        def body(i, acc):
            _, tangent = jax.jvp(grad_fn, (flat,), (eye[i],))
            return acc + tangent[i]

        laplacian = jax.lax.fori_loop(0, n, body, jnp.asarray(0.0 + 0.0j))
        return grad_fn(flat).reshape(-1, 2), laplacian

    return derivatives


def make_log_derivatives(ansatz: Ansatz) -> Callable:
    o_row = make_param_gradient(ansatz)
    positional = make_position_derivatives(ansatz)

    def fn(params, positions) -> LogDerivatives:
        pos_grad, laplacian = positional(params, positions)
        return LogDerivatives(param_grad=o_row(params, positions), pos_grad=pos_grad, laplacian_sum=laplacian)

    return fn


def param_gradient(ansatz: Ansatz, params: dict, configuration):
    return make_param_gradient(ansatz)(params, jnp.asarray(configuration).reshape(-1, 2))


def position_derivatives(ansatz: Ansatz, params: dict, configuration):
    return make_position_derivatives(ansatz)(params, jnp.asarray(configuration).reshape(-1, 2))


def flatten_params(params: dict):
    """(flat real vector, unravel function)"""
    return ravel_pytree(params)


def _central(fn, x, i, h, order):
    e = np.zeros_like(x)
    e[i] = h
    if order == 1:
        return (fn(x + e) - fn(x - e)) / (2 * h)
    return (fn(x + e) - 2 * fn(x) + fn(x - e)) / h**2


def fd_oracle(
    fn: Callable,
    point,
    which: str = "gradient",
    step: float = 1e-3,
    indices: Optional[list] = None,
):
    """
    Central differences of a scalar function of a flat real vector, Richardson
    extrapolated from steps h and h/2 (error O(h^4)).

    which="gradient" returns the partial derivatives at indices; "laplacian"
    returns the sum of second partials over indices.
    """
    if not FD_STEP_RANGE[0] <= step <= FD_STEP_RANGE[1]:
        raise ValueError(f"step must be in [{FD_STEP_RANGE[0]:g}, {FD_STEP_RANGE[1]:g}], got {step}")
    if which not in ("gradient", "laplacian"):
        raise ValueError(f"Unknown derivative '{which}'. Choose gradient or laplacian")

    x = np.asarray(point, dtype=float).reshape(-1)
    indices = range(len(x)) if indices is None else indices
    order = 1 if which == "gradient" else 2
    values = []
    for i in indices:
        coarse = _central(fn, x, i, step, order)
        fine = _central(fn, x, i, step / 2, order)
        values.append((4 * fine - coarse) / 3)
    values = np.asarray(values)
    return values if which == "gradient" else values.sum()
