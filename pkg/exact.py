#!/usr/bin/env python3
"""
exact.py - Two-electron exact diagonalization on a real-space grid

This module handles:
- Discretizing one up and one down electron on a periodic fractional grid
- Applying the grid Hamiltonian matrix-free (kinetic finite differences,
  the same Lambda as VMC, softened Coulomb on the grid)
- Lanczos ground energies at grid_n and 3/2 grid_n plus a Richardson
  extrapolation, for validating VMC on small systems
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh

from hamiltonian import HamiltonianParams, moire_potential_value
from lattice import MoireGeometry, SimulationCell, minimum_image

MAX_GRID_N = 40
DEFAULT_MAX_BYTES = 4 * 1024**3
_LANCZOS_VECTORS = 24


class OracleSizeError(ValueError):
    """The requested grid does not fit in the memory bound."""


@dataclass(frozen=True)
class OracleResult:
    grid_sizes: tuple
    energies: tuple
    extrapolated: float
    n_electrons: int = 2

    @property
    def energy_per_electron(self) -> float:
        return self.extrapolated / self.n_electrons


def _periodic_stencils(n: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Second and first derivative matrices on n periodic points with step 1/n."""
    h = 1.0 / n
    eye = sp.identity(n, format="csr")
    up = sp.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))
    d2 = (up + up.T - 2 * eye) / h**2
    d1 = (up - up.T) / (2 * h)
    return d2.tocsr(), d1.tocsr()


def single_particle_kinetic(cell: SimulationCell, grid_n: int) -> sp.csr_matrix:
    """
    -(r_s^2 / 2) Laplacian on the grid_n x grid_n fractional grid.

    With r = s @ A the Laplacian in fractional coordinates uses the metric
    G = inv(A A^T): sum_ab G_ab d_a d_b.
    """
    metric = np.linalg.inv(cell.lattice_matrix @ cell.lattice_matrix.T)
    d2, d1 = _periodic_stencils(grid_n)
    eye = sp.identity(grid_n, format="csr")
    laplacian = (
        metric[0, 0] * sp.kron(d2, eye)
        + metric[1, 1] * sp.kron(eye, d2)
        + 2 * metric[0, 1] * sp.kron(d1, d1)
    )
    return (-0.5 * cell.r_s**2 * laplacian).tocsr()


def grid_positions(cell: SimulationCell, grid_n: int) -> np.ndarray:
    idx = np.arange(grid_n) / grid_n
    frac = np.stack(np.meshgrid(idx, idx, indexing="ij"), axis=-1).reshape(-1, 2)
    return frac @ cell.lattice_matrix


def pair_potential_table(cell: SimulationCell, params: HamiltonianParams, grid_n: int) -> np.ndarray:
    """
    Softened interaction energy (W) for every grid displacement, shape (grid_n, grid_n).

    The grid is translation invariant, so the pair energy depends only on the
    difference of the fractional indices.
    """
    if params.r_s == 0:
        return np.zeros((grid_n, grid_n))
    d = np.asarray(minimum_image(cell, grid_positions(cell, grid_n)))
    table = params.r_s * cell.r_s / np.sqrt(np.sum(d**2, axis=-1) + params.softening**2)
    return table.reshape(grid_n, grid_n)


def estimate_bytes(grid_n: int) -> int:
    """Memory for the Lanczos basis plus work vectors at grid_n."""
    dim = grid_n**4
    return int((_LANCZOS_VECTORS + 6) * dim * 8 + 2 * grid_n**2 * 8 * 9)


def ground_energy(
    cell: SimulationCell,
    geometry: MoireGeometry,
    params: HamiltonianParams,
    grid_n: int,
    max_bytes: int = DEFAULT_MAX_BYTES,
) -> float:
    """Lowest eigenvalue (W, both electrons) of the two-particle grid Hamiltonian."""
    needed = estimate_bytes(grid_n)
    if needed > max_bytes:
        raise OracleSizeError(
            f"grid_n={grid_n} needs a {grid_n**4:,}-dimensional space "
            f"(~{needed / 1024**2:,.0f} MiB), over the {max_bytes / 1024**2:,.0f} MiB bound"
        )

    m = grid_n**2
    kinetic = single_particle_kinetic(cell, grid_n)
    one_body = np.asarray(moire_potential_value(geometry, grid_positions(cell, grid_n), params))
    table = pair_potential_table(cell, params, grid_n)

    i = np.arange(grid_n)
    # V_ee[(a, b), (c, d)] = table[(a - c) mod n, (b - d) mod n]
    da = (i[:, None] - i[None, :]) % grid_n
    pair = table[da[:, None, :, None], da[None, :, None, :]].reshape(m, m)
    diagonal = one_body[:, None] + one_body[None, :] + pair

    def matvec(v):
        psi = v.reshape(m, m)
        out = kinetic @ psi + (kinetic @ psi.T).T + diagonal * psi
        return out.reshape(-1)

    operator = LinearOperator((m * m, m * m), matvec=matvec, dtype=float)
    energies = eigsh(operator, k=1, which="SA", tol=1e-12, ncv=_LANCZOS_VECTORS, return_eigenvectors=False)
    return float(energies[0])


def single_particle_ground_energy(
    cell: SimulationCell,
    geometry: MoireGeometry,
    params: HamiltonianParams,
    grid_n: int,
) -> float:
    """Lowest single-particle level of the same grid (moire potential only)."""
    one_body = np.asarray(moire_potential_value(geometry, grid_positions(cell, grid_n), params))
    hamiltonian = single_particle_kinetic(cell, grid_n) + sp.diags(one_body)
    ncv = min(grid_n**2 - 1, _LANCZOS_VECTORS)
    energies = eigsh(hamiltonian, k=1, which="SA", tol=1e-12, ncv=ncv, return_eigenvectors=False)
    return float(energies[0])


def ed_oracle(
    cell: SimulationCell,
    geometry: MoireGeometry,
    params: HamiltonianParams,
    grid_n: int,
    softening: float | None = None,
    max_bytes: int = DEFAULT_MAX_BYTES,
    verbose: bool = False,
) -> OracleResult:
    """
    Ground energy of one up and one down electron, at grid_n and 3/2 grid_n.

    The kinetic stencil is second order, so the pair is extrapolated as
    (q^2 E_fine - E_coarse) / (q^2 - 1) with q = 3/2. softening, when given,
    overrides params.softening (in a_B*).
    """
    if cell.n_up != 1 or cell.n_down != 1:
        raise ValueError(f"ed_oracle needs exactly one up and one down electron, got ({cell.n_up}, {cell.n_down})")
    if grid_n < 4 or grid_n > MAX_GRID_N:
        raise ValueError(f"grid_n must be in [4, {MAX_GRID_N}], got {grid_n}")
    if grid_n % 2:
        raise ValueError(f"grid_n must be even so that 3/2 grid_n is an integer, got {grid_n}")
    if softening is not None:
        params = replace(params, softening=float(softening))
    if params.r_s != 0 and params.softening <= 0:
        raise ValueError("ed_oracle uses the softened interaction; pass softening > 0 (e.g. 0.1 a_m)")

    fine_n = grid_n * 3 // 2
    estimate_check = estimate_bytes(fine_n)
    if estimate_check > max_bytes:
        raise OracleSizeError(
            f"refinement grid {fine_n} needs ~{estimate_check / 1024**2:,.0f} MiB, "
            f"over the {max_bytes / 1024**2:,.0f} MiB bound; lower grid_n"
        )

    energies = []
    for n in (grid_n, fine_n):
        energy = ground_energy(cell, geometry, params, n, max_bytes=max_bytes)
        energies.append(energy)
        if verbose:
            print(f"  grid {n}x{n}: E = {energy:.10f} W ({energy / 2:.10f} per electron)")

    q2 = (fine_n / grid_n) ** 2
    extrapolated = (q2 * energies[1] - energies[0]) / (q2 - 1)
    return OracleResult(
        grid_sizes=(grid_n, fine_n),
        energies=tuple(energies),
        extrapolated=float(extrapolated),
    )
