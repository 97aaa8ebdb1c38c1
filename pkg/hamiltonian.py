#!/usr/bin/env python3
"""
hamiltonian.py - Moire continuum Hamiltonian in units of W

    H/W = -1/2 sum_i lap_i - (V_m/W) sum_i Lambda(r_i) + r_s sum_{i<j} 1/|r_i - r_j|

with lengths in the printed equation measured in r_s * a_B*. Positions here are
in a_B*, so the kinetic term carries a factor r_s^2 and the Coulomb term a
factor r_s * r_s(cell).

This module handles:
- The moire potential energy
- Periodic Coulomb energy via the 2D Ewald sum (neutralizing background and
  Madelung self term included), or a softened minimum-image interaction
- Assembly of the local energy from log-derivatives of the wavefunction
"""

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import erfc as jerfc
from scipy.special import erfc

from lattice import MoireGeometry, SimulationCell, minimum_image, moire_lambda

jax.config.update("jax_enable_x64", True)

# erfc(6) ~ 2e-17: both Ewald sums are cut where the screening falls below this
_EWALD_SCREEN = 6.0


@dataclass(frozen=True)
class HamiltonianParams:
    """
    v_m_over_w: moire depth V_m/W
    r_s: interaction prefactor (0 switches the Coulomb term off)
    ewald_alpha: splitting parameter in 1/a_B* (None picks 2.5/sqrt(area))
    ewald_rmax, ewald_kmax: real/reciprocal cutoffs (None derives them from alpha)
    softening: > 0 replaces Ewald by minimum-image r_s/sqrt(r^2 + s^2), s in a_B*
    phi: moire phase in radians
    """
    v_m_over_w: float
    r_s: float
    ewald_alpha: Optional[float] = None
    ewald_rmax: Optional[float] = None
    ewald_kmax: Optional[float] = None
    softening: float = 0.0
    phi: float = np.pi / 3


class LocalEnergyParts(NamedTuple):
    """Per-electron local energy contributions in units of W."""
    kinetic: jax.Array
    potential_moire: jax.Array
    potential_ee: jax.Array
    madelung: jax.Array

    @property
    def total(self):
        return self.kinetic + self.potential_moire + self.potential_ee + self.madelung


def resolve_ewald(cell: SimulationCell, params: HamiltonianParams) -> HamiltonianParams:
    """Fill in the Ewald splitting and cutoffs that were left unset."""
    alpha = params.ewald_alpha or 2.5 / np.sqrt(cell.area)
    rmax = params.ewald_rmax or _EWALD_SCREEN / alpha
    kmax = params.ewald_kmax or 2 * _EWALD_SCREEN * alpha
    return replace(params, ewald_alpha=float(alpha), ewald_rmax=float(rmax), ewald_kmax=float(kmax))


def moire_potential_value(geometry: MoireGeometry, r, params: HamiltonianParams):
    """-(V_m/W) Lambda(r) for each position (last axis of size 2)."""
    return -params.v_m_over_w * moire_lambda(r, geometry.g_vectors, geometry.phi)


def _lattice_points(basis: np.ndarray, radius: float, exclude_origin: bool) -> np.ndarray:
    """All integer combinations of the basis rows within radius."""
    shortest = np.min(np.linalg.norm(basis, axis=1))
    # enough range for skewed cells: bound by the smallest height of the parallelogram
    height = abs(np.linalg.det(basis)) / np.max(np.linalg.norm(basis, axis=1))
    n_max = int(np.ceil(radius / min(shortest, height))) + 1
    idx = np.arange(-n_max, n_max + 1)
    m = np.array([[i, j] for i in idx for j in idx], dtype=float)
    points = m @ basis
    norms = np.linalg.norm(points, axis=1)
    keep = norms <= radius
    if exclude_origin:
        keep &= norms > 0
    return points[keep]


class EwaldSum:
    """
    2D Ewald sum for 1/r charges confined to the plane of a 2D lattice.

    The periodic pair potential with background subtracted is

        phi(r) = sum_n erfc(a|r+n|)/|r+n| + (1/A) sum_{G!=0} (2 pi/G) erfc(G/2a) cos(G.r) - 2 sqrt(pi)/(a A)

    and the self-image constant xi = lim_{r->0} [phi(r) - 1/r]. The energy of N
    like charges is sum_{i<j} phi(r_ij) + N xi / 2. Units: a_B*, Hartree.
    """

    def __init__(self, cell: SimulationCell, alpha: float, rmax: float, kmax: float):
        self.cell = cell
        self.alpha = alpha
        area = cell.area
        circumradius = np.max(np.linalg.norm(
            np.array([[0.5, 0.5], [0.5, -0.5]]) @ cell.lattice_matrix, axis=1))
        self.images = _lattice_points(cell.lattice_matrix, rmax + circumradius, exclude_origin=False)
        g = _lattice_points(cell.reciprocal_matrix, kmax, exclude_origin=True)
        g_norm = np.linalg.norm(g, axis=1)
        self.g_vectors = g
        self.g_weights = 2 * np.pi / area * erfc(g_norm / (2 * alpha)) / g_norm
        self.background = -2 * np.sqrt(np.pi) / (alpha * area)

        self_images = _lattice_points(cell.lattice_matrix, rmax, exclude_origin=True)
        self_norm = np.linalg.norm(self_images, axis=1)
        self.xi = float(
            np.sum(erfc(alpha * self_norm) / self_norm)
            + np.sum(self.g_weights)
            + self.background
            - 2 * alpha / np.sqrt(np.pi)
        )

    def energy(self, positions):
        """Coulomb energy (Hartree, a_B*) of unit charges at positions (N, 2)."""
        n = positions.shape[0]
        if n < 2:
            return jnp.asarray(0.5 * n * self.xi)
        i, j = np.triu_indices(n, k=1)
        r_ij = minimum_image(self.cell, positions[i] - positions[j])
        shifted = r_ij[:, None, :] + jnp.asarray(self.images)[None, :, :]
        dist = jnp.linalg.norm(shifted, axis=-1)
        real = jnp.sum(jerfc(self.alpha * dist) / dist)

        phase = positions @ jnp.asarray(self.g_vectors).T
        rho_sq = jnp.sum(jnp.cos(phase), axis=0) ** 2 + jnp.sum(jnp.sin(phase), axis=0) ** 2
        recip = 0.5 * jnp.sum(jnp.asarray(self.g_weights) * (rho_sq - n))

        return real + recip + len(i) * self.background + 0.5 * n * self.xi


def softened_energy(cell: SimulationCell, positions, softening: float):
    """Minimum-image sum of 1/sqrt(r^2 + s^2) over pairs (a_B*, Hartree)."""
    n = positions.shape[0]
    if n < 2:
        return jnp.asarray(0.0)
    i, j = np.triu_indices(n, k=1)
    r_ij = minimum_image(cell, positions[i] - positions[j])
    return jnp.sum(1.0 / jnp.sqrt(jnp.sum(r_ij**2, axis=-1) + softening**2))


def make_ee_energy(cell: SimulationCell, params: HamiltonianParams) -> tuple[Callable, float]:
    """
    Returns (energy_fn, madelung) where energy_fn(positions) is the total
    electron-electron energy in W including the Madelung term, and madelung is
    that per-electron constant in W.
    """
    prefactor = params.r_s * cell.r_s
    if params.softening > 0:
        return (lambda x: prefactor * softened_energy(cell, x, params.softening)), 0.0

    params = resolve_ewald(cell, params)
    ewald = EwaldSum(cell, params.ewald_alpha, params.ewald_rmax, params.ewald_kmax)
    return (lambda x: prefactor * ewald.energy(x)), prefactor * ewald.xi / 2


def ewald_ee_energy(cell: SimulationCell, configuration, params: HamiltonianParams) -> float:
    """Periodic electron-electron energy (W, whole cell) of one configuration."""
    positions = jnp.asarray(configuration).reshape(-1, 2)
    if positions.shape[0] > 1:
        i, j = np.triu_indices(positions.shape[0], k=1)
        gaps = np.linalg.norm(np.asarray(minimum_image(cell, positions[i] - positions[j])), axis=-1)
        if np.any(gaps == 0) and params.softening <= 0:
            raise ValueError(f"Coincident electrons at pairs {list(zip(i[gaps == 0], j[gaps == 0]))}")
    energy_fn, _ = make_ee_energy(cell, params)
    return float(energy_fn(positions))


def make_local_energy(cell: SimulationCell, geometry: MoireGeometry, params: HamiltonianParams) -> Callable:
    """
    Build local_energy(positions, grad_log_psi, laplacian_log_psi) -> LocalEnergyParts.

    positions: (N, 2); grad_log_psi: complex (N, 2) or (2N,); laplacian_log_psi:
    complex scalar summed over all coordinates. Parts are per electron.
    """
    ee_fn, madelung = make_ee_energy(cell, params)
    n = cell.n_electrons
    kinetic_scale = -0.5 * cell.r_s**2 / n

    def local_energy(positions, grad_log_psi, laplacian_log_psi) -> LocalEnergyParts:
        positions = positions.reshape(-1, 2)
        grad = grad_log_psi.reshape(-1)
        kinetic = kinetic_scale * (laplacian_log_psi + jnp.sum(grad * grad))
        moire = jnp.sum(moire_potential_value(geometry, positions, params)) / n
        ee_total = ee_fn(positions)
        madelung_total = n * madelung
        return LocalEnergyParts(
            kinetic=kinetic,
            potential_moire=moire,
            potential_ee=(ee_total - madelung_total) / n,
            madelung=jnp.asarray(madelung),
        )

    return local_energy


def local_energy(
    cell: SimulationCell,
    geometry: MoireGeometry,
    params: HamiltonianParams,
    configuration,
    grad_log_psi,
    laplacian_log_psi,
) -> LocalEnergyParts:
    return make_local_energy(cell, geometry, params)(
        jnp.asarray(configuration), jnp.asarray(grad_log_psi), jnp.asarray(laplacian_log_psi))
