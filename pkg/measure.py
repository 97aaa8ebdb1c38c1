#!/usr/bin/env python3
"""
measure.py - Measurement phase: sample a trained state and accumulate observables

This module handles:
- Restoring parameters and walkers from a checkpoint, reseeding the walker
  rng streams from the measurement seed
- Sweeping with a frozen step size and folding every retained sample into the
  energy, density, pair-correlation and polarization accumulators
- Dropping and counting walkers with non-finite local energies, aborting once
  they exceed the flagged-sample limit
- Exporting snapshots and raw accumulators for the analyze phase
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jax
import numpy as np

from checkpoint import CheckpointData
from config import RunConfig, write_resolved
from estimators import EstimatorAccumulator, load_accumulators, save_accumulators
from lattice import SimulationCell
from observables import (
    RESOLVED_PAIRS,
    DensityGrid,
    PairCorrelationAccumulator,
    accumulate_density,
    polarization_samples,
    polarization_vector,
)
from sampler import write_snapshots
from train import NumericalError, System, make_sampler, make_walker_evaluator, params_template, reset_stats, state_from_checkpoint

ENERGY_PARTS = ("kinetic", "potential_moire", "potential_ee", "madelung")
SNAPSHOT_GLOB = "snapshot_*.csv"


@dataclass
class Measurement:
    """Everything the analyze phase reads back; energies are per electron in W."""
    energy: EstimatorAccumulator
    density: DensityGrid
    pairs: PairCorrelationAccumulator
    polarization: list = field(default_factory=list)
    acceptance: float = float("nan")
    steps: int = 0
    n_walkers: int = 0
    n_evaluated: int = 0
    n_flagged: int = 0

    def energy_summary(self) -> dict:
        mean, se = self.energy.mean, self.energy.standard_error
        summary = {name: {"mean": float(mean[k]), "se": float(se[k])} for k, name in enumerate(ENERGY_PARTS)}
        ones = np.ones(len(ENERGY_PARTS))
        total_variance = float(ones @ self.energy.covariance_matrix @ ones) if self.energy.count > 1 else float("nan")
        summary["total"] = {
            "mean": float(mean.sum()),
            "se": float(np.sqrt(total_variance / max(self.energy.count, 1))),
        }
        return summary


def empty_measurement(cell: SimulationCell, density_resolution: int, pair_bins: int) -> Measurement:
    return Measurement(
        energy=EstimatorAccumulator(shape=(len(ENERGY_PARTS),), covariance=True),
        density=DensityGrid.empty(cell, density_resolution),
        pairs=PairCorrelationAccumulator(pair_bins, cell.n_electrons),
    )


def record_sample(measurement: Measurement, parts, positions: np.ndarray, cell: SimulationCell, g) -> int:
    """
    Fold one sweep's walkers into the accumulators. Walkers whose local energy
    has a non-finite part are left out of every estimator; returns their count.
    """
    energies = np.stack([np.asarray(p).real for p in parts], axis=1)
    finite = np.all(np.isfinite(energies), axis=1)
    n_flagged = int(np.sum(~finite))
    measurement.n_evaluated += len(finite)
    measurement.n_flagged += n_flagged
    if not finite.any():
        return n_flagged

    kept = positions[finite]
    measurement.energy.add_batch(energies[finite])
    accumulate_density(kept, cell, measurement.density)
    measurement.pairs.add(kept, cell)
    measurement.polarization.append(complex(np.mean(polarization_samples(kept, g))))
    return n_flagged


def check_flagged(measurement: Measurement, max_flagged_fraction: float) -> None:
    if measurement.n_flagged > max_flagged_fraction * measurement.n_evaluated:
        raise NumericalError(
            f"{measurement.n_flagged}/{measurement.n_evaluated} measured samples have non-finite local "
            f"energies (limit {max_flagged_fraction:.1%})"
        )


def measure_loop(
    config: RunConfig,
    system: System,
    data: CheckpointData,
    steps: int,
    seed: int,
    samples_dir: Optional[Path] = None,
    verbose: bool = True,
) -> Measurement:
    """
    Run `steps` sweeps from the checkpointed walkers. The same checkpoint and
    seed always give identical accumulators.
    """
    _, _, unravel = params_template(config, system)
    state = state_from_checkpoint(data, config, system, unravel)
    walkers = reset_stats(state.walkers)._replace(keys=jax.random.split(jax.random.PRNGKey(seed), data.n_walkers))
    sweep, _ = make_sampler(system, unravel, config.sampler.proposals_per_sweep)
    evaluate = make_walker_evaluator(system, unravel, with_gradients=False)

    cell = system.cell
    m = config.measure
    measurement = empty_measurement(cell, m.density_resolution, m.pair_bins)
    g = polarization_vector(cell)

    for step in range(steps):
        walkers = sweep(state.flat, walkers)
        _, parts = evaluate(state.flat, walkers.positions)
        positions = np.asarray(walkers.positions)
        record_sample(measurement, parts, positions, cell, g)
        check_flagged(measurement, config.optimizer.max_flagged_fraction)
        if samples_dir is not None and step % m.snapshot_every == 0:
            write_snapshots(Path(samples_dir) / f"snapshot_{step:06d}.csv", positions, cell.spins)
        if verbose and (step + 1) % max(1, steps // 10) == 0:
            e = measurement.energy.mean.sum()
            print(f"  measure {step + 1:5d}/{steps}  E = {e:.6f} W")

    measurement.acceptance = walkers.stats.harmonic_mean
    measurement.steps = steps
    measurement.n_walkers = data.n_walkers
    return measurement


def save_measurement(directory: Path, measurement: Measurement, config: RunConfig) -> list:
    """Write accumulators, histograms, measurement.json and the resolved config; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    accumulators = directory / "accumulators.npz"
    save_accumulators(accumulators, {"energy": measurement.energy, "pair_correlation": measurement.pairs.stats})

    histograms = directory / "histograms.npz"
    np.savez(
        histograms,
        density_up=measurement.density.counts_up,
        density_down=measurement.density.counts_down,
        density_samples=np.asarray(measurement.density.n_samples),
        density_resolution=np.asarray(measurement.density.resolution),
        pair_samples=np.asarray(measurement.pairs.n_samples),
        polarization=np.asarray(measurement.polarization, dtype=complex),
        **{f"pairs_{name}": measurement.pairs.counts[name] for name in RESOLVED_PAIRS},
    )

    summary = directory / "measurement.json"
    with open(summary, "w") as f:
        json.dump({
            "steps": measurement.steps,
            "walkers": measurement.n_walkers,
            "acceptance_hmean": measurement.acceptance,
            "n_evaluated": measurement.n_evaluated,
            "n_flagged": measurement.n_flagged,
            "energy_per_electron": measurement.energy_summary(),
        }, f, indent=2)
    resolved = write_resolved(config, directory / "config.resolved.json")
    return [accumulators, histograms, summary, resolved]


def load_measurement(directory: Path, cell: SimulationCell) -> Measurement:
    """Inverse of save_measurement."""
    directory = Path(directory)
    accumulators = load_accumulators(directory / "accumulators.npz")
    with np.load(directory / "histograms.npz") as h:
        resolution = int(h["density_resolution"])
        density = DensityGrid.empty(cell, resolution)
        density.counts_up = h["density_up"]
        density.counts_down = h["density_down"]
        density.n_samples = int(h["density_samples"])
        pair_bins = h["pairs_uu"].shape[0]
        pairs = PairCorrelationAccumulator(
            pair_bins,
            cell.n_electrons,
            counts={name: h[f"pairs_{name}"] for name in RESOLVED_PAIRS},
            stats=accumulators["pair_correlation"],
            n_samples=int(h["pair_samples"]),
        )
        polarization = list(h["polarization"])
    with open(directory / "measurement.json") as f:
        summary = json.load(f)
    return Measurement(
        energy=accumulators["energy"],
        density=density,
        pairs=pairs,
        polarization=polarization,
        acceptance=summary.get("acceptance_hmean", float("nan")),
        steps=summary.get("steps", 0),
        n_walkers=summary.get("walkers", 0),
        n_evaluated=summary.get("n_evaluated", 0),
        n_flagged=summary.get("n_flagged", 0),
    )


def snapshot_files(directory: Path) -> list:
    return sorted(Path(directory).glob(SNAPSHOT_GLOB))
