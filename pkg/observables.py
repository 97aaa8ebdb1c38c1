#!/usr/bin/env python3
"""
observables.py - Estimators for the paired Wigner crystal

This module handles:
- Complex polarization Z with jackknife errors
- Spin-resolved density histograms and line cuts
- Charge and spin pair correlations on a periodic displacement grid
- Molecular localization f_o, f_u, f_m from Voronoi-integrated occupations
- Molecule assignment and the pair-angle, dipole-alignment and
  centre-of-mass statistics of the molecules
- CSV/JSON writers for all of the above

Samples are position arrays of shape (S, N, 2) with the cell's fixed spin
order (spin up first).
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from estimators import EstimatorAccumulator, jackknife
from lattice import MoireGeometry, SimulationCell, VoronoiPartition, minimum_image, nearest_point

RESOLVED_PAIRS = ("uu", "ud", "du", "dd")
NEIGHBOR_FACTOR = 1.2
DEGENERATE_DIPOLE = 1e-8


def _fractional(cell: SimulationCell, positions) -> np.ndarray:
    return np.asarray(positions) @ np.linalg.inv(cell.lattice_matrix)


def _min_image(cell: SimulationCell, d) -> np.ndarray:
    return np.asarray(minimum_image(cell, np.asarray(d, dtype=float)))


# --- complex polarization ---------------------------------------------------

def polarization_vector(cell: SimulationCell) -> np.ndarray:
    """Shortest nonzero reciprocal vector of the supercell."""
    m = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)], dtype=float)
    vectors = m @ cell.reciprocal_matrix
    lengths = np.round(np.linalg.norm(vectors, axis=1), 10)
    angles = np.round(np.mod(np.arctan2(vectors[:, 1], vectors[:, 0]), 2 * np.pi), 10)
    return vectors[np.lexsort((angles, lengths))[0]]


def polarization_samples(samples, g) -> np.ndarray:
    """exp(-i g . sum_i r_i) for every sample."""
    total = np.asarray(samples).sum(axis=1)
    return np.exp(-1j * (total @ np.asarray(g)))


@dataclass(frozen=True)
class Polarization:
    z: complex
    abs_z: float
    se_re: float
    se_im: float
    se_abs: float
    g_vector: tuple

    def to_dict(self) -> dict:
        return {
            "Z_re": float(self.z.real),
            "Z_im": float(self.z.imag),
            "absZ": self.abs_z,
            "se": self.se_abs,
            "se_re": self.se_re,
            "se_im": self.se_im,
            "g_vector": list(self.g_vector),
        }


def complex_polarization(samples, cell: SimulationCell, g=None, values=None, n_blocks: int = 64) -> Polarization:
    """
    Z = <exp(-i g . sum_i r_i)> over samples. values may hold precomputed
    per-sample (or per-block) phases instead of samples.
    """
    g = polarization_vector(cell) if g is None else np.asarray(g)
    values = polarization_samples(samples, g) if values is None else np.asarray(values)
    z, se_z = jackknife(values, np.mean, n_blocks=n_blocks)
    _, se_re = jackknife(values.real, np.mean, n_blocks=n_blocks)
    _, se_im = jackknife(values.imag, np.mean, n_blocks=n_blocks)
    abs_z, se_abs = jackknife(values, lambda v: np.abs(np.mean(v)), n_blocks=n_blocks)
    return Polarization(
        z=complex(z), abs_z=float(abs_z), se_re=float(se_re), se_im=float(se_im),
        se_abs=float(se_abs), g_vector=tuple(float(x) for x in g),
    )


# --- density ----------------------------------------------------------------

@dataclass
class DensityGrid:
    """Per-spin position histograms on the fractional grid (resolution per moire cell)."""
    resolution: int
    grid_shape: tuple
    counts_up: np.ndarray
    counts_down: np.ndarray
    n_samples: int = 0

    @classmethod
    def empty(cls, cell: SimulationCell, resolution: int = 48) -> "DensityGrid":
        shape = (resolution * cell.n_cells_x, resolution * cell.n_cells_y)
        return cls(resolution, shape, np.zeros(shape), np.zeros(shape), 0)

    def bin_area(self, cell: SimulationCell) -> float:
        return cell.area / (self.grid_shape[0] * self.grid_shape[1])

    def rho(self, cell: SimulationCell) -> tuple[np.ndarray, np.ndarray]:
        """(rho_up, rho_down) in electrons per a_B*^2; they integrate to (n_up, n_down)."""
        norm = max(self.n_samples, 1) * self.bin_area(cell)
        return self.counts_up / norm, self.counts_down / norm

    def merge(self, other: "DensityGrid") -> "DensityGrid":
        if other.grid_shape != self.grid_shape:
            raise ValueError(f"Cannot merge density grids {self.grid_shape} and {other.grid_shape}")
        self.counts_up = self.counts_up + other.counts_up
        self.counts_down = self.counts_down + other.counts_down
        self.n_samples += other.n_samples
        return self


def accumulate_density(samples, cell: SimulationCell, density: Optional[DensityGrid] = None,
                       resolution: int = 48) -> DensityGrid:
    """Histogram electron positions by spin onto the density grid."""
    density = DensityGrid.empty(cell, resolution) if density is None else density
    samples = np.asarray(samples)
    frac = np.mod(_fractional(cell, samples), 1.0)
    nx, ny = density.grid_shape
    ix = np.minimum((frac[..., 0] * nx).astype(int), nx - 1)
    iy = np.minimum((frac[..., 1] * ny).astype(int), ny - 1)
    flat = ix * ny + iy
    up = cell.spins > 0
    density.counts_up += np.bincount(flat[:, up].ravel(), minlength=nx * ny).reshape(nx, ny)
    density.counts_down += np.bincount(flat[:, ~up].ravel(), minlength=nx * ny).reshape(nx, ny)
    density.n_samples += len(samples)
    return density


def density_linecut(density: DensityGrid, cell: SimulationCell, path, n_points: int = 200) -> dict:
    """
    Bilinear, periodic interpolation of the charge and spin density along a
    polyline (vertices in a_B*). Returns arc length, position and densities.
    """
    path = np.asarray(path, dtype=float)
    if len(path) < 2 or n_points < 2:
        raise ValueError("A line cut needs at least two path vertices and two points")
    segments = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(segments)])
    s = np.linspace(0.0, arc[-1], n_points)
    points = np.stack([np.interp(s, arc, path[:, k]) for k in range(2)], axis=-1)

    rho_up, rho_down = density.rho(cell)
    frac = np.mod(_fractional(cell, points), 1.0)
    coords = [frac[:, k] * density.grid_shape[k] - 0.5 for k in range(2)]
    up = map_coordinates(rho_up, coords, order=1, mode="grid-wrap")
    down = map_coordinates(rho_down, coords, order=1, mode="grid-wrap")
    return {"s": s, "x": points[:, 0], "y": points[:, 1], "rho": up + down, "rho_spin": up - down}


def default_linecut_path(geometry: MoireGeometry, cell: SimulationCell) -> np.ndarray:
    """site -> nearest ring centre -> the site opposite it on that ring"""
    site = geometry.minima_sites[0]
    d = _min_image(cell, geometry.ring_centers - site)
    centre = site + d[np.argmin(np.linalg.norm(d, axis=1))]
    return np.array([site, centre, 2 * centre - site])


# --- pair correlation ---------------------------------------------------------

def _displacement_bins(cell: SimulationCell, samples, n_bins: int) -> np.ndarray:
    """Bin index (S, N, N) of each pair displacement; bin 0 holds zero displacement."""
    frac = _fractional(cell, samples)
    d = frac[:, :, None, :] - frac[:, None, :, :]
    k = np.mod(np.round(d * n_bins).astype(int), n_bins)
    return k[..., 0] * n_bins + k[..., 1]


def displacement_grid(cell: SimulationCell, n_bins: int) -> np.ndarray:
    """Real-space displacement at every bin centre, shape (n_bins, n_bins, 2)."""
    k = np.arange(n_bins) / n_bins
    k = np.mod(k + 0.5, 1.0) - 0.5
    frac = np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1)
    return frac @ cell.lattice_matrix


@dataclass
class PairCorrelationAccumulator:
    """
    Pair counts by spin class plus per-sample (g, g_s) statistics.

    g(r) = A / (N^2 a_bin) <sum_{i != j} 1[r_ij in bin]>, whose ideal-gas value
    is 1 - 1/N and which satisfies (N/A) int (g - 1) = -1 exactly.
    """
    n_bins: int
    n_electrons: int
    counts: dict = field(default_factory=dict)
    stats: Optional[EstimatorAccumulator] = None
    n_samples: int = 0

    def __post_init__(self):
        for name in RESOLVED_PAIRS:
            self.counts.setdefault(name, np.zeros((self.n_bins, self.n_bins)))
        if self.stats is None:
            self.stats = EstimatorAccumulator(shape=(2, self.n_bins, self.n_bins))

    def add(self, samples, cell: SimulationCell) -> "PairCorrelationAccumulator":
        samples = np.asarray(samples)
        n_samples, n = samples.shape[:2]
        nb2 = self.n_bins**2
        bins = _displacement_bins(cell, samples, self.n_bins)
        down = cell.spins < 0
        pair_class = 2 * down[:, None].astype(int) + down[None, :].astype(int)
        off = ~np.eye(n, dtype=bool)

        flat_bins = bins[:, off]
        classes = np.broadcast_to(pair_class[off], flat_bins.shape)
        resolved = np.bincount((classes * nb2 + flat_bins).ravel(), minlength=4 * nb2).reshape(4, self.n_bins, self.n_bins)
        for c, name in enumerate(RESOLVED_PAIRS):
            self.counts[name] = self.counts[name] + resolved[c]

        same = np.broadcast_to((pair_class[off] == 0) | (pair_class[off] == 3), flat_bins.shape)
        sample_index = np.broadcast_to(np.arange(n_samples)[:, None], flat_bins.shape)
        per_sample = np.bincount((sample_index * nb2 + flat_bins).ravel(), minlength=n_samples * nb2)
        per_same = np.bincount((sample_index * nb2 + flat_bins)[same], minlength=n_samples * nb2)
        total = per_sample.reshape(n_samples, self.n_bins, self.n_bins)
        spin = (2 * per_same - per_sample).reshape(n_samples, self.n_bins, self.n_bins)
        scale = cell.area / (self.n_electrons**2 * (cell.area / nb2))
        self.stats.add_batch(np.stack([total, spin], axis=1) * scale)
        self.n_samples += n_samples
        return self

    def merge(self, other: "PairCorrelationAccumulator") -> "PairCorrelationAccumulator":
        for name in RESOLVED_PAIRS:
            self.counts[name] = self.counts[name] + other.counts[name]
        self.stats.merge(other.stats)
        self.n_samples += other.n_samples
        return self


@dataclass(frozen=True)
class PairCorrelation:
    n_bins: int
    displacements: np.ndarray
    g: np.ndarray
    g_s: np.ndarray
    se_g: np.ndarray
    se_gs: np.ndarray
    resolved: dict
    counts: np.ndarray
    n_samples: int
    baseline: float

    def sum_rule(self, cell: SimulationCell, n_electrons: int) -> float:
        """(N/A) int (g - 1) d^2r over the cell; -1 for any sample set."""
        g = np.nan_to_num(self.g, nan=0.0)
        bin_area = cell.area / self.n_bins**2
        return n_electrons / cell.area * float(np.sum(g - 1.0) * bin_area)

    def metadata(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "n_samples": self.n_samples,
            "ideal_gas_baseline": self.baseline,
            "normalization": "g = A/(N^2 bin_area) <sum_{i!=j} counts>; empty bins are missing",
        }


def pair_correlation(samples=None, cell: SimulationCell = None, n_bins: int = 64,
                     accumulator: Optional[PairCorrelationAccumulator] = None) -> PairCorrelation:
    """g, g_s and spin-resolved g_{ss'}; bins with no pairs are NaN (missing)."""
    if accumulator is None:
        accumulator = PairCorrelationAccumulator(n_bins, cell.n_electrons).add(samples, cell)
    n_bins = accumulator.n_bins
    n_up, n_down = cell.n_up, cell.n_down
    n_total = cell.n_electrons
    bin_area = cell.area / n_bins**2
    norm = accumulator.n_samples * bin_area

    sizes = {"u": n_up, "d": n_down}
    resolved = {}
    for name in RESOLVED_PAIRS:
        denominator = sizes[name[0]] * sizes[name[1]]
        with np.errstate(invalid="ignore", divide="ignore"):
            resolved[name] = cell.area * accumulator.counts[name] / (denominator * norm) if denominator else None

    counts = sum(accumulator.counts[name] for name in RESOLVED_PAIRS)
    missing = counts == 0
    g = np.where(missing, np.nan, accumulator.stats.mean[0])
    g_s = np.where(missing, np.nan, accumulator.stats.mean[1])
    se = accumulator.stats.standard_error
    for name, value in resolved.items():
        if value is not None:
            resolved[name] = np.where(accumulator.counts[name] == 0, np.nan, value)

    return PairCorrelation(
        n_bins=n_bins,
        displacements=displacement_grid(cell, n_bins),
        g=g,
        g_s=g_s,
        se_g=np.where(missing, np.nan, se[0]),
        se_gs=np.where(missing, np.nan, se[1]),
        resolved=resolved,
        counts=counts,
        n_samples=accumulator.n_samples,
        baseline=1.0 - 1.0 / n_total,
    )


def spin_correlation_from_resolved(pc: PairCorrelation, cell: SimulationCell) -> np.ndarray:
    """g_s rebuilt as sum (2 delta - 1) (N_s N_s' / N^2) g_ss' (missing bins as 0 counts)."""
    sizes = {"u": cell.n_up, "d": cell.n_down}
    n2 = cell.n_electrons**2
    total = np.zeros((pc.n_bins, pc.n_bins))
    for name, value in pc.resolved.items():
        if value is None:
            continue
        sign = 1.0 if name[0] == name[1] else -1.0
        total += sign * sizes[name[0]] * sizes[name[1]] / n2 * np.nan_to_num(value, nan=0.0)
    return total


# --- molecular localization -------------------------------------------------

def ring_superlattice_labels(geometry: MoireGeometry, cell: SimulationCell) -> np.ndarray:
    """
    Registration label 0..3 of every ring centre on the doubled triangular
    superlattice (integer moire coordinates mod 2).
    """
    inv = np.linalg.inv(cell.moire_matrix)
    lattice_int = cell.lattice_matrix @ inv
    if np.any(np.abs(np.mod(np.round(lattice_int), 2)) > 0):
        raise ValueError(
            f"The {cell.n_cells_x}x{cell.n_cells_y} {cell.shape_tag} cell is not commensurate with the "
            "doubled ring superlattice; molecular registrations need an even tiling"
        )
    m = np.round((geometry.ring_centers - geometry.ring_centers[0]) @ inv).astype(int)
    m = np.mod(m, 2)
    return m[:, 0] * 2 + m[:, 1]


def occupied_sites(geometry: MoireGeometry, cell: SimulationCell, registration: int) -> np.ndarray:
    """Boolean mask over minima sites lying on a ring of the chosen registration."""
    labels = ring_superlattice_labels(geometry, cell)
    centres = geometry.ring_centers[labels == registration]
    d = _min_image(cell, geometry.minima_sites[:, None, :] - centres[None, :, :])
    reach = cell.moire_constant / np.sqrt(3) * (1 + 1e-6)
    return np.any(np.linalg.norm(d, axis=-1) <= reach, axis=1)


@dataclass(frozen=True)
class MolecularLocalization:
    f_o: float
    f_u: float
    f_m: float
    registration: int
    f_o_by_registration: tuple


def site_occupations(density_field: np.ndarray, partition: VoronoiPartition) -> np.ndarray:
    """Electrons in each Voronoi cell for a total density sampled on the partition grid."""
    return partition.integrate(density_field)


def molecular_localization(
    density_field: np.ndarray,
    partition: VoronoiPartition,
    geometry: MoireGeometry,
    cell: SimulationCell,
) -> MolecularLocalization:
    """
    f_o and f_u are the mean Voronoi occupations of occupied and unoccupied
    sites, f_m = 3 (f_o - f_u); the registration maximizing f_o is used.
    """
    occupation = site_occupations(density_field, partition)
    results = []
    for registration in range(4):
        mask = occupied_sites(geometry, cell, registration)
        f_o = float(occupation[mask].mean())
        f_u = float(occupation[~mask].mean()) if np.any(~mask) else 0.0
        results.append((f_o, f_u))
    best = int(np.argmax([f_o for f_o, _ in results]))
    f_o, f_u = results[best]
    return MolecularLocalization(
        f_o=f_o, f_u=f_u, f_m=3 * (f_o - f_u), registration=best,
        f_o_by_registration=tuple(r[0] for r in results),
    )


# --- molecules ---------------------------------------------------------------

@dataclass(frozen=True)
class MoleculeAssignment:
    valid: bool
    centres: np.ndarray  # (M, 2) occupied ring centres
    up: np.ndarray       # (M,) electron index of the up member, -1 if invalid
    down: np.ndarray


def occupied_centres(geometry: MoireGeometry, cell: SimulationCell, registration: int) -> np.ndarray:
    labels = ring_superlattice_labels(geometry, cell)
    return geometry.ring_centers[labels == registration]


def molecule_assignment(sample, cell: SimulationCell, centres: np.ndarray) -> MoleculeAssignment:
    """Assign electrons to the nearest occupied ring; valid iff each ring has one up and one down."""
    sample = np.asarray(sample).reshape(-1, 2)
    nearest = nearest_point(cell, sample, centres)
    up = cell.spins > 0
    up_counts = np.bincount(nearest[up], minlength=len(centres))
    down_counts = np.bincount(nearest[~up], minlength=len(centres))
    valid = bool(np.all(up_counts == 1) and np.all(down_counts == 1))
    up_index = np.full(len(centres), -1)
    down_index = np.full(len(centres), -1)
    if valid:
        electrons = np.arange(len(sample))
        up_index[nearest[up]] = electrons[up]
        down_index[nearest[~up]] = electrons[~up]
    return MoleculeAssignment(valid=valid, centres=centres, up=up_index, down=down_index)


def pair_angles(sample, cell: SimulationCell, assignment: MoleculeAssignment) -> np.ndarray:
    """Signed angle from (r_up - c) to (r_down - c) about each ring centre, in [0, 2 pi)."""
    sample = np.asarray(sample).reshape(-1, 2)
    a = _min_image(cell, sample[assignment.up] - assignment.centres)
    b = _min_image(cell, sample[assignment.down] - assignment.centres)
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = np.sum(a * b, axis=1)
    return np.mod(np.arctan2(cross, dot), 2 * np.pi)


def angle_bin_centres(n_bins: int) -> np.ndarray:
    return np.arange(n_bins) * 2 * np.pi / n_bins


def pair_angle_histogram(angles, n_bins: int = 36) -> np.ndarray:
    """Unit-mass histogram on bins centred at k 2 pi / n_bins."""
    width = 2 * np.pi / n_bins
    index = np.mod(np.floor(np.asarray(angles) / width + 0.5).astype(int), n_bins)
    hist = np.bincount(index, minlength=n_bins).astype(float)
    return hist / hist.sum() if hist.sum() > 0 else hist


def dipoles(sample, cell: SimulationCell, assignment: MoleculeAssignment) -> tuple[np.ndarray, np.ndarray]:
    """(p, c): p = r_up - r_down (minimum image), c = ring centre + offset of the pair midpoint."""
    sample = np.asarray(sample).reshape(-1, 2)
    p = _min_image(cell, sample[assignment.up] - sample[assignment.down])
    midpoint = sample[assignment.down] + p / 2
    offset = _min_image(cell, midpoint - assignment.centres)
    return p, assignment.centres + offset


@dataclass
class MolecularStats:
    """Accumulated molecule statistics over snapshots."""
    theta_bins: int = 36
    dipole_bins: int = 36
    com_bins: int = 64
    theta_counts: np.ndarray = None
    delta_counts: np.ndarray = None
    com_counts: np.ndarray = None
    n_snapshots: int = 0
    n_valid: int = 0
    n_degenerate: int = 0
    n_molecules: int = 0

    def __post_init__(self):
        if self.theta_counts is None:
            self.theta_counts = np.zeros(self.theta_bins)
        if self.delta_counts is None:
            self.delta_counts = np.zeros(self.dipole_bins)
        if self.com_counts is None:
            self.com_counts = np.zeros((self.com_bins, self.com_bins))

    @property
    def validity_fraction(self) -> float:
        return self.n_valid / self.n_snapshots if self.n_snapshots else float("nan")

    def theta_histogram(self) -> np.ndarray:
        total = self.theta_counts.sum()
        return self.theta_counts / total if total else self.theta_counts

    def delta_histogram(self) -> np.ndarray:
        total = self.delta_counts.sum()
        return self.delta_counts / total if total else self.delta_counts

    def com_correlation(self, cell: SimulationCell) -> np.ndarray:
        """Pair correlation of molecule centres, normalized like pair_correlation."""
        if self.n_valid == 0 or self.n_molecules == 0:
            return np.full(self.com_counts.shape, np.nan)
        bin_area = cell.area / self.com_bins**2
        g = cell.area * self.com_counts / (self.n_molecules**2 * bin_area * self.n_valid)
        return np.where(self.com_counts == 0, np.nan, g)


def delta_bin_edges(n_bins: int) -> np.ndarray:
    return np.linspace(0.0, np.pi, n_bins + 1)


def dipole_statistics(
    samples,
    cell: SimulationCell,
    centres: np.ndarray,
    stats: Optional[MolecularStats] = None,
) -> MolecularStats:
    """
    Fold snapshots into the molecular statistics: validity, theta histogram,
    nearest-neighbour dipole alignment angles and centre-of-mass pair counts.
    Dipoles shorter than 1e-8 a_m are excluded and counted.
    """
    stats = MolecularStats() if stats is None else stats
    neighbor_cut = NEIGHBOR_FACTOR * 2 * cell.moire_constant
    for sample in np.asarray(samples):
        stats.n_snapshots += 1
        assignment = molecule_assignment(sample, cell, centres)
        if not assignment.valid:
            continue
        stats.n_valid += 1
        n_mol = len(centres)
        stats.n_molecules = n_mol

        theta = pair_angles(sample, cell, assignment)
        stats.theta_counts += pair_angle_histogram(theta, stats.theta_bins) * len(theta)

        p, com = dipoles(sample, cell, assignment)
        length = np.linalg.norm(p, axis=1)
        ok = length >= DEGENERATE_DIPOLE * cell.moire_constant
        stats.n_degenerate += int(np.sum(~ok))

        i, j = np.triu_indices(n_mol, k=1)
        com_d = _min_image(cell, com[i] - com[j])
        near = (np.linalg.norm(com_d, axis=1) < neighbor_cut) & ok[i] & ok[j]
        if np.any(near):
            unit = p / np.where(length > 0, length, 1.0)[:, None]
            cos = np.clip(np.sum(unit[i[near]] * unit[j[near]], axis=1), -1.0, 1.0)
            hist, _ = np.histogram(np.arccos(cos), bins=delta_bin_edges(stats.dipole_bins))
            stats.delta_counts += hist

        ii, jj = np.nonzero(~np.eye(n_mol, dtype=bool))
        frac = _fractional(cell, com[ii] - com[jj])
        k = np.mod(np.round(frac * stats.com_bins).astype(int), stats.com_bins)
        np.add.at(stats.com_counts, (k[:, 0], k[:, 1]), 1)
    return stats


# --- writers -----------------------------------------------------------------

def _fmt(value) -> str:
    return "" if not np.isfinite(value) else f"{value:.10g}"


def write_density_csv(path: Path, density: DensityGrid, cell: SimulationCell) -> None:
    """Columns x, y, rho_up, rho_down at every grid point."""
    rho_up, rho_down = density.rho(cell)
    nx, ny = density.grid_shape
    fx, fy = (np.arange(nx) + 0.5) / nx, (np.arange(ny) + 0.5) / ny
    points = np.stack(np.meshgrid(fx, fy, indexing="ij"), axis=-1) @ cell.lattice_matrix
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "rho_up", "rho_down"])
        for (x, y), up, down in zip(points.reshape(-1, 2), rho_up.ravel(), rho_down.ravel()):
            writer.writerow([_fmt(x), _fmt(y), _fmt(up), _fmt(down)])


def write_correlation_csv(path: Path, displacements, g, g_s, se) -> None:
    """Columns dx, dy, g, g_s, se; missing bins are left empty."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["dx", "dy", "g", "g_s", "se"])
        for (dx, dy), a, b, c in zip(np.asarray(displacements).reshape(-1, 2), np.ravel(g), np.ravel(g_s), np.ravel(se)):
            writer.writerow([_fmt(dx), _fmt(dy), _fmt(a), _fmt(b), _fmt(c)])


def write_histogram_csv(path: Path, centres, values, column: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([column, "probability"])
        for c, v in zip(centres, values):
            writer.writerow([_fmt(c), _fmt(v)])


def write_linecut_csv(path: Path, cut: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["s", "x", "y", "rho", "rho_spin"])
        for row in zip(cut["s"], cut["x"], cut["y"], cut["rho"], cut["rho_spin"]):
            writer.writerow([_fmt(v) for v in row])


def write_scalars_json(path: Path, scalars: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(scalars, f, indent=2)
