#!/usr/bin/env python3
"""
lattice.py - Simulation cell and honeycomb moire geometry

This module handles:
- Building the periodic supercell for a given tiling, r_s and filling
- The three shortest moire reciprocal vectors and the shape function Lambda(r)
- Honeycomb minima sites, hexagon (ring) centres and the Voronoi partition
- Minimum-image displacements and wrapping into the cell

Lattice vectors are stored as matrix rows, so fractional coordinates s satisfy
r = s @ A. All lengths are in effective Bohr radii.
"""

from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

SHAPES = ("triangular", "rectangular")
HONEYCOMB_PHI = np.pi / 3

# 3x3 image shell searched by minimum_image
_IMAGE_SHELL = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)


@dataclass(frozen=True)
class SimulationCell:
    """Periodic supercell holding the electrons."""
    lattice_matrix: np.ndarray
    reciprocal_matrix: np.ndarray
    moire_matrix: np.ndarray
    n_up: int
    n_down: int
    r_s: float
    nu_m: float
    n_cells_x: int
    n_cells_y: int
    shape_tag: str

    @property
    def n_electrons(self) -> int:
        return self.n_up + self.n_down

    @property
    def n_cells(self) -> int:
        return self.n_cells_x * self.n_cells_y

    @property
    def area(self) -> float:
        return float(abs(np.linalg.det(self.lattice_matrix)))

    @property
    def moire_constant(self) -> float:
        return float(np.linalg.norm(self.moire_matrix[0]))

    @property
    def spins(self) -> np.ndarray:
        """+1 for spin up, -1 for spin down; up electrons come first."""
        return np.concatenate([np.ones(self.n_up), -np.ones(self.n_down)])

    @property
    def ws_radius(self) -> float:
        """Radius of the circle inscribed in the Wigner-Seitz cell."""
        images = _IMAGE_SHELL[np.any(_IMAGE_SHELL != 0, axis=1)] @ self.lattice_matrix
        return float(np.min(np.linalg.norm(images, axis=1)) / 2)


@dataclass(frozen=True)
class MoireGeometry:
    g_vectors: np.ndarray
    phi: float
    minima_sites: np.ndarray
    ring_centers: np.ndarray


@dataclass(frozen=True)
class VoronoiPartition:
    """Nearest-site labels on a regular grid of fractional coordinates."""
    grid_resolution: int
    grid_shape: tuple
    site_assignment: np.ndarray
    grid_points: np.ndarray
    point_area: float
    n_sites: int = field(default=0)

    def integrate(self, field_values: np.ndarray) -> np.ndarray:
        """Integrate a field sampled on the grid over each Voronoi cell."""
        weights = np.asarray(field_values, dtype=float).reshape(-1) * self.point_area
        return np.bincount(self.site_assignment.reshape(-1), weights=weights, minlength=self.n_sites)

    def site_areas(self) -> np.ndarray:
        return self.integrate(np.ones(self.grid_shape))


def moire_constant(r_s: float, nu_m: float) -> float:
    """a_m from n_cells * (sqrt(3)/2) a_m^2 = N_e * pi * r_s^2 at N_e = 2 nu_m n_cells."""
    return r_s * np.sqrt(4 * np.pi * nu_m / np.sqrt(3))


def triangular_vectors(a_m: float) -> np.ndarray:
    return np.array([[a_m, 0.0], [a_m / 2, a_m * np.sqrt(3) / 2]])


def build_cell(
    shape_tag: str,
    n_cells_x: int,
    n_cells_y: int,
    r_s: float,
    nu_m: float,
    n_up: int,
    n_down: int,
) -> SimulationCell:
    """
    Build the supercell for a tiling of the triangular moire lattice.

    Triangular cells tile the primitive vectors (a1, a2); rectangular cells tile
    the sqrt(3)-aspect rectangle (a1, 2 a2 - a1), which holds two moire cells, so
    n_cells_y must be even there.
    """
    if shape_tag not in SHAPES:
        raise ValueError(f"Unknown cell shape '{shape_tag}'. Choose from: {', '.join(SHAPES)}")
    if not r_s > 0:
        raise ValueError(f"r_s must be positive, got {r_s}")
    if not nu_m > 0:
        raise ValueError(f"Filling nu_m must be positive, got {nu_m}")
    if n_cells_x < 1 or n_cells_y < 1:
        raise ValueError(f"Tiling must be at least 1x1, got {n_cells_x}x{n_cells_y}")
    if n_up < 0 or n_down < 0 or n_up + n_down == 0:
        raise ValueError(f"Need a non-negative electron count per spin and at least one electron, got ({n_up}, {n_down})")

    n_cells = n_cells_x * n_cells_y
    expected = 2 * nu_m * n_cells
    if abs(expected - (n_up + n_down)) > 1e-9:
        raise ValueError(
            f"{n_up + n_down} electrons is inconsistent with filling nu_m={nu_m} on "
            f"{n_cells_x}x{n_cells_y} moire cells: the honeycomb has {2 * n_cells} minima, "
            f"so the cell needs {expected:g} electrons"
        )

    a_m = moire_constant(r_s, nu_m)
    moire = triangular_vectors(a_m)
    if shape_tag == "triangular":
        lattice = np.array([n_cells_x * moire[0], n_cells_y * moire[1]])
    else:
        if n_cells_y % 2:
            raise ValueError(f"Rectangular cells need an even n_cells_y, got {n_cells_y}")
        lattice = np.array([n_cells_x * moire[0], (n_cells_y // 2) * (2 * moire[1] - moire[0])])

    return SimulationCell(
        lattice_matrix=lattice,
        reciprocal_matrix=2 * np.pi * np.linalg.inv(lattice).T,
        moire_matrix=moire,
        n_up=int(n_up),
        n_down=int(n_down),
        r_s=float(r_s),
        nu_m=float(nu_m),
        n_cells_x=int(n_cells_x),
        n_cells_y=int(n_cells_y),
        shape_tag=shape_tag,
    )


def debug_cell(lattice_matrix, n_up: int, n_down: int, r_s: float = 1.0) -> SimulationCell:
    """A single-tile cell with arbitrary lattice vectors (square cells for oracles)."""
    lattice = np.asarray(lattice_matrix, dtype=float)
    n_e = n_up + n_down
    return SimulationCell(
        lattice_matrix=lattice,
        reciprocal_matrix=2 * np.pi * np.linalg.inv(lattice).T,
        moire_matrix=lattice,
        n_up=int(n_up),
        n_down=int(n_down),
        r_s=float(r_s),
        nu_m=n_e / 2,
        n_cells_x=1,
        n_cells_y=1,
        shape_tag="debug",
    )


def rotate_cell(cell: SimulationCell, theta: float) -> SimulationCell:
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    lattice = cell.lattice_matrix @ rot.T
    return SimulationCell(
        lattice_matrix=lattice,
        reciprocal_matrix=2 * np.pi * np.linalg.inv(lattice).T,
        moire_matrix=cell.moire_matrix @ rot.T,
        n_up=cell.n_up,
        n_down=cell.n_down,
        r_s=cell.r_s,
        nu_m=cell.nu_m,
        n_cells_x=cell.n_cells_x,
        n_cells_y=cell.n_cells_y,
        shape_tag=cell.shape_tag,
    )


def reciprocal_vectors(cell: SimulationCell) -> np.ndarray:
    """
    The three shortest moire reciprocal vectors.

    For hexagonal moire lattices they are chosen 120 degrees apart so that
    g1 + g2 + g3 = 0. Other lattices (debug cells) return the first three
    members of the shortest shell ordered by angle.
    """
    b = 2 * np.pi * np.linalg.inv(cell.moire_matrix).T
    m = np.array([[i, j] for i in range(-2, 3) for j in range(-2, 3) if (i, j) != (0, 0)], dtype=float)
    vectors = m @ b
    lengths = np.linalg.norm(vectors, axis=1)
    shell = vectors[lengths < lengths.min() * (1 + 1e-9)]
    angles = np.mod(np.arctan2(shell[:, 1], shell[:, 0]), 2 * np.pi)
    shell = shell[np.argsort(np.round(angles, 12))]

    if len(shell) == 6:
        return shell[[0, 2, 4]]
    return shell[:3]


def moire_lambda(r, g_vectors, phi: float):
    """Lambda(r) = 2 sum_j cos(g_j . r + phi); works on numpy and jax arrays."""
    xp = jnp if isinstance(r, jax.Array) else np
    return 2 * xp.sum(xp.cos(xp.asarray(r) @ xp.asarray(g_vectors).T + phi), axis=-1)


def _lambda_grad_hess(r: np.ndarray, g_vectors: np.ndarray, phi: float):
    arg = g_vectors @ r + phi
    grad = -2 * (np.sin(arg)[:, None] * g_vectors).sum(axis=0)
    hess = -2 * np.einsum("j,ja,jb->ab", np.cos(arg), g_vectors, g_vectors)
    return grad, hess


def _newton_refine(r0: np.ndarray, g_vectors: np.ndarray, phi: float, sign: float) -> np.ndarray:
    """Newton iteration on sign * Lambda (sign=-1 finds minima of -Lambda)."""
    r = np.array(r0, dtype=float)
    for _ in range(50):
        grad, hess = _lambda_grad_hess(r, g_vectors, phi)
        step = np.linalg.solve(sign * hess, -sign * grad)
        r = r + step
        if np.linalg.norm(step) < 1e-14:
            break
    grad, hess = _lambda_grad_hess(r, g_vectors, phi)
    if np.linalg.norm(grad) > 1e-8 or np.any(np.linalg.eigvalsh(sign * hess) <= 0):
        raise ValueError(f"Newton refinement did not converge to an extremum near {r0}")
    return r


def _check_honeycomb_phase(phi: float) -> None:
    k = (phi - HONEYCOMB_PHI) / (2 * np.pi / 3)
    if abs(k - np.round(k)) > 1e-9:
        raise ValueError(
            f"phi={np.degrees(phi):.6g} deg does not give a honeycomb potential; "
            "use 60 deg +/- n*120 deg"
        )


def _seed_points(cell: SimulationCell) -> np.ndarray:
    a1, a2 = cell.moire_matrix
    return np.array([k * (a1 + a2) / 3 for k in range(3)])


def _tile(basis: np.ndarray, cell: SimulationCell) -> np.ndarray:
    """Copy moire-cell basis points over the supercell, wrapped and deduplicated."""
    n_max = 2 * (cell.n_cells_x + cell.n_cells_y)
    idx = np.arange(-n_max, n_max + 1)
    shifts = np.array([[i, j] for i in idx for j in idx], dtype=float) @ cell.moire_matrix
    points = (basis[:, None, :] + shifts[None, :, :]).reshape(-1, 2)
    frac = np.mod(points @ np.linalg.inv(cell.lattice_matrix), 1.0)
    frac[np.isclose(frac, 1.0, atol=1e-10)] = 0.0
    _, keep = np.unique(np.round(frac, 8), axis=0, return_index=True)
    frac = frac[np.sort(keep)]
    order = np.lexsort((frac[:, 0], frac[:, 1]))
    return frac[order] @ cell.lattice_matrix


def find_minima(g_vectors: np.ndarray, phi: float, cell: SimulationCell) -> np.ndarray:
    """Honeycomb minima of -Lambda over the supercell (2 per moire cell)."""
    _check_honeycomb_phase(phi)
    seeds = _seed_points(cell)
    order = np.argsort(-moire_lambda(seeds, g_vectors, phi))
    basis = np.array([_newton_refine(seeds[i], g_vectors, phi, sign=-1.0) for i in order[:2]])
    sites = _tile(basis, cell)
    if len(sites) != 2 * cell.n_cells:
        raise ValueError(f"Found {len(sites)} minima, expected {2 * cell.n_cells}")
    return sites


def ring_centers(g_vectors: np.ndarray, phi: float, cell: SimulationCell) -> np.ndarray:
    """Hexagon centres of the honeycomb: the maxima of -Lambda, one per moire cell."""
    _check_honeycomb_phase(phi)
    seeds = _seed_points(cell)
    seed = seeds[np.argmin(moire_lambda(seeds, g_vectors, phi))]
    centre = _newton_refine(seed, g_vectors, phi, sign=1.0)
    centres = _tile(centre[None, :], cell)
    if len(centres) != cell.n_cells:
        raise ValueError(f"Found {len(centres)} ring centres, expected {cell.n_cells}")
    return centres


def moire_geometry(cell: SimulationCell, phi: float = HONEYCOMB_PHI) -> MoireGeometry:
    g_vectors = reciprocal_vectors(cell)
    return MoireGeometry(
        g_vectors=g_vectors,
        phi=float(phi),
        minima_sites=find_minima(g_vectors, phi, cell),
        ring_centers=ring_centers(g_vectors, phi, cell),
    )


def minimum_image(cell: SimulationCell, displacement):
    """
    Shortest periodic image of a displacement (last axis of size 2).

    The fractional part is first reduced to [-1/2, 1/2) and the 3x3 image shell
    around it is searched. Differentiable under JAX.
    """
    lattice = jnp.asarray(cell.lattice_matrix)
    d = jnp.asarray(displacement)
    frac = d @ jnp.asarray(np.linalg.inv(cell.lattice_matrix))
    base = (frac - jnp.round(frac)) @ lattice
    candidates = base[..., None, :] + jnp.asarray(_IMAGE_SHELL) @ lattice
    best = jax.nn.one_hot(jnp.argmin(jnp.sum(candidates**2, axis=-1), axis=-1), len(_IMAGE_SHELL))
    return jnp.einsum("...k,...kd->...d", best, candidates)


def wrap_positions(cell: SimulationCell, positions):
    """Map positions into the parallelogram spanned by the lattice vectors."""
    xp = jnp if isinstance(positions, jax.Array) else np
    frac = positions @ xp.asarray(np.linalg.inv(cell.lattice_matrix))
    return xp.mod(frac, 1.0) @ xp.asarray(cell.lattice_matrix)


def fractional_grid(cell: SimulationCell, grid_resolution: int) -> tuple[tuple, np.ndarray]:
    """Cell-centred grid points, grid_resolution per moire cell along each axis."""
    nx = grid_resolution * cell.n_cells_x
    ny = grid_resolution * cell.n_cells_y
    fx = (np.arange(nx) + 0.5) / nx
    fy = (np.arange(ny) + 0.5) / ny
    frac = np.stack(np.meshgrid(fx, fy, indexing="ij"), axis=-1)
    return (nx, ny), frac @ cell.lattice_matrix


def nearest_point(cell: SimulationCell, points: np.ndarray, targets: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Index of the nearest target for every point under the minimum-image metric."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.empty(len(points), dtype=int)
    for start in range(0, len(points), chunk):
        d = targets[None, :, :] - points[start:start + chunk, None, :]
        d = np.asarray(minimum_image(cell, d))
        out[start:start + chunk] = np.argmin(np.sum(d**2, axis=-1), axis=1)
    return out


def voronoi_assign(
    geometry: MoireGeometry,
    cell: SimulationCell,
    grid_resolution: int = 48,
    sites: Optional[np.ndarray] = None,
) -> VoronoiPartition:
    """Assign every grid point to its nearest minimum site (minimum image)."""
    if grid_resolution < 32:
        raise ValueError(f"grid_resolution must be at least 32 per moire cell, got {grid_resolution}")
    sites = geometry.minima_sites if sites is None else sites
    shape, points = fractional_grid(cell, grid_resolution)
    labels = nearest_point(cell, points, sites).reshape(shape)
    return VoronoiPartition(
        grid_resolution=grid_resolution,
        grid_shape=shape,
        site_assignment=labels,
        grid_points=points,
        point_area=cell.area / (shape[0] * shape[1]),
        n_sites=len(sites),
    )
