#!/usr/bin/env python3
"""
analysis.py - Analyze phase: turn samples into observable files

This module handles:
- Loading raw accumulators (if the measure phase wrote them) or rebuilding
  density, pair correlation and Z from snapshot exports
- Molecular localization, molecule validity, pair-angle and dipole statistics
  for quarter-filled cells commensurate with the doubled ring lattice
- The density line cut and BCS occupation amplitudes
- Writing every CSV and the scalar report
"""

from pathlib import Path
from typing import Optional

import numpy as np

from ansatz import occupation_amplitudes
from lattice import voronoi_assign
from measure import load_measurement, snapshot_files
from observables import (
    MolecularStats,
    PairCorrelationAccumulator,
    accumulate_density,
    angle_bin_centres,
    complex_polarization,
    default_linecut_path,
    delta_bin_edges,
    density_linecut,
    dipole_statistics,
    displacement_grid,
    molecular_localization,
    occupied_centres,
    pair_correlation,
    polarization_samples,
    polarization_vector,
    write_correlation_csv,
    write_density_csv,
    write_histogram_csv,
    write_linecut_csv,
    write_scalars_json,
)
from sampler import read_snapshots
from report import write_density_images
from train import System

MOLECULAR_FILLING = 0.25


def load_snapshots(directory: Path, spins: np.ndarray) -> np.ndarray:
    """All snapshot files in a directory stacked as (S, N, 2)."""
    files = snapshot_files(directory)
    if not files:
        return np.zeros((0, len(spins), 2))
    stacks = []
    for path in files:
        positions, file_spins = read_snapshots(path)
        if not np.array_equal(file_spins, np.asarray(spins, dtype=int)):
            raise ValueError(f"{path}: spin labels do not match the cell ({file_spins} vs {spins})")
        stacks.append(positions)
    return np.concatenate(stacks)


def molecular_supported(system: System) -> tuple[bool, str]:
    cell = system.cell
    if abs(cell.nu_m - MOLECULAR_FILLING) > 1e-12:
        return False, f"molecular statistics need nu_m = 1/4, the cell has {cell.nu_m:g}"
    if cell.n_up != cell.n_down:
        return False, "molecular statistics need equal spin populations"
    lattice_int = np.round(cell.lattice_matrix @ np.linalg.inv(cell.moire_matrix)).astype(int)
    if np.any(lattice_int % 2):
        return False, f"the {cell.n_cells_x}x{cell.n_cells_y} {cell.shape_tag} cell does not hold the doubled ring lattice"
    return True, ""


def analyze_samples(
    system: System,
    samples_dir: Path,
    output_dir: Path,
    config,
    params: Optional[dict] = None,
    verbose: bool = True,
) -> dict:
    """
    Compute and write all observables. Returns the scalar report, which is
    also written to output_dir/observables.json; the list of written files is
    under the "files" key.
    """
    samples_dir, output_dir = Path(samples_dir), Path(output_dir)
    cell, geometry = system.cell, system.geometry
    a = config.analysis
    snapshots = load_snapshots(samples_dir, cell.spins)
    written = []

    if (samples_dir / "histograms.npz").exists():
        measurement = load_measurement(samples_dir, cell)
        density, pairs = measurement.density, measurement.pairs
        phases = np.asarray(measurement.polarization)
        energy = measurement.energy_summary()
        if verbose:
            print(f"  Loaded accumulators: {density.n_samples} samples")
    else:
        if len(snapshots) < 2:
            raise ValueError(f"{samples_dir}: needs accumulators or at least two snapshot configurations")
        density = accumulate_density(snapshots, cell, resolution=max(config.measure.density_resolution, 32))
        pairs = PairCorrelationAccumulator(config.measure.pair_bins, cell.n_electrons).add(snapshots, cell)
        phases = polarization_samples(snapshots, polarization_vector(cell))
        energy = None
        if verbose:
            print(f"  Rebuilt estimators from {len(snapshots)} snapshot configurations")

    report = {}
    if len(phases) >= 2:
        z = complex_polarization(None, cell, values=phases)
        report.update(z.to_dict())

    rho_up, rho_down = density.rho(cell)
    report["density_integral"] = float((rho_up + rho_down).sum() * density.bin_area(cell))
    report["max_abs_spin_density"] = float(np.max(np.abs(rho_up - rho_down)))
    written.append(output_dir / "density.csv")
    write_density_csv(written[-1], density, cell)

    pc = pair_correlation(cell=cell, accumulator=pairs)
    written.append(output_dir / "pair_correlation.csv")
    write_correlation_csv(written[-1], pc.displacements, pc.g, pc.g_s, pc.se_g)
    report["pair_correlation"] = pc.metadata()
    report["pair_sum_rule"] = pc.sum_rule(cell, cell.n_electrons)

    written.extend(write_density_images(output_dir, rho_up + rho_down, rho_up - rho_down, cell))

    cut = density_linecut(density, cell, default_linecut_path(geometry, cell), a.linecut_points)
    written.append(output_dir / "density_linecut.csv")
    write_linecut_csv(written[-1], cut)

    supported, reason = molecular_supported(system)
    if supported:
        partition = voronoi_assign(geometry, cell, grid_resolution=density.resolution)
        loc = molecular_localization(rho_up + rho_down, partition, geometry, cell)
        report.update({"f_o": loc.f_o, "f_u": loc.f_u, "f_m": loc.f_m, "registration": loc.registration})

        stats = MolecularStats(theta_bins=a.theta_bins, dipole_bins=a.dipole_bins, com_bins=a.com_bins)
        stats = dipole_statistics(snapshots, cell, occupied_centres(geometry, cell, loc.registration), stats)
        report.update({
            "validity_fraction": stats.validity_fraction,
            "n_snapshots": stats.n_snapshots,
            "n_degenerate_dipoles": stats.n_degenerate,
        })
        written.append(output_dir / "pair_angle.csv")
        write_histogram_csv(written[-1], angle_bin_centres(a.theta_bins), stats.theta_histogram(), "theta")
        edges = delta_bin_edges(a.dipole_bins)
        written.append(output_dir / "dipole_alignment.csv")
        write_histogram_csv(written[-1], (edges[:-1] + edges[1:]) / 2, stats.delta_histogram(), "delta_theta")
        com = stats.com_correlation(cell)
        written.append(output_dir / "com_correlation.csv")
        write_correlation_csv(written[-1], displacement_grid(cell, a.com_bins), com,
                              np.full(com.shape, np.nan), np.full(com.shape, np.nan))
    else:
        report["molecular_statistics"] = f"skipped: {reason}"
        if verbose:
            print(f"  Note: {reason}")

    if params is not None and "bcs" in params:
        amplitudes = occupation_amplitudes(params)
        written.append(output_dir / "occupation_amplitudes.csv")
        write_histogram_csv(written[-1], np.arange(len(amplitudes)), amplitudes, "index")
        report["occupation_amplitudes"] = [float(x) for x in amplitudes]

    if energy is not None:
        report["energy_per_electron"] = energy

    written.append(output_dir / "observables.json")
    write_scalars_json(written[-1], report)
    report["files"] = [str(p) for p in written]
    return report

