#!/usr/bin/env python3
"""
networks.py - Visible features and the attention message-passing network

This module handles:
- Periodic pair features v_ij and one-body features v_i
- Plain MLPs stored as lists of {"w", "b"} dicts
- L rounds of attention message passing on one-body and pair hidden states

Parameters are nested dicts/lists of jax arrays so that every transformation
(grad, vmap, ravel_pytree) works on them directly.
"""

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from lattice import SimulationCell

jax.config.update("jax_enable_x64", True)

PAIR_FEATURES = 7  # cos (2), sin (2), ||sin||, ||cos||, s_ij
ONE_BODY_FEATURES = 4


@dataclass(frozen=True)
class NetworkShape:
    """Widths and depths of the message-passing network."""
    n_layers: int = 3
    attention_width: int = 32
    message_width: int = 32
    one_body_width: int = 32
    one_body_depth: int = 2
    pair_width: int = 26
    pair_depth: int = 2


class PairFeatures(NamedTuple):
    pair: jax.Array      # (N, N, 7)
    one_body: jax.Array  # (N, 4)


class HiddenState(NamedTuple):
    one_body: jax.Array  # (N, one_body_width)
    pair: jax.Array      # (N, N, pair_width)
    layer: int


def safe_norm(x, axis=-1):
    """Euclidean norm with a zero (not NaN) gradient at the origin."""
    sq = jnp.sum(x**2, axis=axis)
    nonzero = sq > 0
    return jnp.where(nonzero, jnp.sqrt(jnp.where(nonzero, sq, 1.0)), 0.0)


def pair_features(cell: SimulationCell, configuration) -> PairFeatures:
    """
    v_ij = [cos(2 pi s_ij), sin(2 pi s_ij), ||sin(pi s_ij)||, ||cos(pi s_ij)||, s_ij]
    with s_ij = A^-1 r_ij in fractional units, and v_i = [sin(2 pi s_i), cos(2 pi s_i)].
    """
    positions = jnp.asarray(configuration).reshape(-1, 2)
    inv = jnp.asarray(np.linalg.inv(cell.lattice_matrix))
    frac = positions @ inv
    s_ij = frac[:, None, :] - frac[None, :, :]

    spins = jnp.asarray(cell.spins)
    same = jnp.where(spins[:, None] == spins[None, :], 1.0, -1.0)

    pair = jnp.concatenate([
        jnp.cos(2 * jnp.pi * s_ij),
        jnp.sin(2 * jnp.pi * s_ij),
        safe_norm(jnp.sin(jnp.pi * s_ij))[..., None],
        safe_norm(jnp.cos(jnp.pi * s_ij))[..., None],
        same[..., None],
    ], axis=-1)
    one_body = jnp.concatenate([jnp.sin(2 * jnp.pi * frac), jnp.cos(2 * jnp.pi * frac)], axis=-1)
    return PairFeatures(pair=pair, one_body=one_body)


def init_linear(key, in_dim: int, out_dim: int, gain: float = 1.0) -> dict:
    w = jax.random.normal(key, (in_dim, out_dim)) * gain / np.sqrt(in_dim)
    return {"w": w, "b": jnp.zeros(out_dim)}


def linear(params: dict, x):
    return jnp.dot(x, params["w"]) + params["b"]


def init_mlp(key, in_dim: int, widths: Sequence[int], final_gain: float = 1.0) -> list:
    keys = jax.random.split(key, len(widths))
    dims = [in_dim, *widths]
    layers = []
    for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        gain = final_gain if k == len(widths) - 1 else 1.0
        layers.append(init_linear(keys[k], d_in, d_out, gain))
    return layers


def mlp(layers: list, x, activate_last: bool = False):
    """GELU between layers; the final layer is affine unless activate_last."""
    for k, layer in enumerate(layers):
        x = linear(layer, x)
        if k < len(layers) - 1 or activate_last:
            x = jax.nn.gelu(x)
    return x


def init_message_passing(key, shape: NetworkShape) -> list:
    layers = []
    g_pair = PAIR_FEATURES + shape.pair_width
    for key_t in jax.random.split(key, shape.n_layers):
        k = jax.random.split(key_t, 6)
        layers.append({
            "query": init_linear(k[0], g_pair, shape.attention_width),
            "key": init_linear(k[1], g_pair, shape.attention_width),
            "attention": init_linear(k[2], shape.attention_width, shape.message_width),
            "message": init_mlp(k[3], g_pair, [shape.message_width]),
            "one_body": init_mlp(
                k[4], shape.message_width + shape.one_body_width, [shape.one_body_width] * shape.one_body_depth),
            "pair": init_mlp(
                k[5], shape.message_width + g_pair, [shape.pair_width] * shape.pair_depth),
        })
    return layers


def message_pass(layers: list, features: PairFeatures, shape: NetworkShape) -> HiddenState:
    """
    h_i^t = F_1([sum_{j != i} m_ij, h_i^{t-1}]) + h_i^{t-1}
    h_ij^t = F_2([m_ij, g_ij]) + h_ij^{t-1}
    m_ij = Linear(GELU((1/sqrt N) sum_l q_il * k_lj)) * F_m(g_ij)

    with g_ij = [v_ij, h_ij^{t-1}] and zero initial hidden states.
    """
    n = features.pair.shape[0]
    h_i = jnp.zeros((n, shape.one_body_width))
    h_ij = jnp.zeros((n, n, shape.pair_width))
    off_diagonal = 1.0 - jnp.eye(n)

    for layer in layers:
        g_ij = jnp.concatenate([features.pair, h_ij], axis=-1)
        q = linear(layer["query"], g_ij)
        k = linear(layer["key"], g_ij)
        scores = jnp.einsum("ilf,ljf->ijf", q, k) / jnp.sqrt(n)
        attention = linear(layer["attention"], jax.nn.gelu(scores))
        m_ij = attention * mlp(layer["message"], g_ij)

        pooled = jnp.einsum("ij,ijf->if", off_diagonal, m_ij)
        h_i = mlp(layer["one_body"], jnp.concatenate([pooled, h_i], axis=-1)) + h_i
        h_ij = mlp(layer["pair"], jnp.concatenate([m_ij, g_ij], axis=-1)) + h_ij

    return HiddenState(one_body=h_i, pair=h_ij, layer=len(layers))
