#!/usr/bin/env python3
"""
vmc.py - Command-line runner for moire paired-crystal VMC

Commands:
    train     Optimize the wavefunction (train --config run.json [--resume ckpt])
    measure   Sample a checkpoint and accumulate observables (measure --ckpt file --steps N)
    analyze   Turn samples into observable CSV/JSON (analyze --samples dir)
    oracle    Two-electron exact diagonalization reference (oracle --config run.json)
    run       Run every phase listed in the config

Exit codes: 0 ok, 2 configuration, 3 numerical failure, 4 I/O or checkpoint.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

# Thread count has to be fixed before jax is imported
load_dotenv()
if os.getenv("VMC_THREADS"):
    _threads = os.environ["VMC_THREADS"]
    os.environ.setdefault(
        "XLA_FLAGS",
        f"--xla_cpu_multi_thread_eigen={'false' if _threads == '1' else 'true'} intra_op_parallelism_threads={_threads}",
    )
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from analysis import analyze_samples  # noqa: E402
from checkpoint import CheckpointError, latest_checkpoint, load_checkpoint  # noqa: E402
from config import ConfigError, RunConfig, config_from_dict, config_hash, config_to_dict, parse_config, write_resolved  # noqa: E402
from exact import ed_oracle  # noqa: E402
from measure import measure_loop, save_measurement  # noqa: E402
from report import code_version, render_summary, write_manifest  # noqa: E402
from train import NumericalError, build_system, params_template, read_training_log, train_loop  # noqa: E402

PROJECT_ROOT = Path(__file__).parent
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def resolve_run_dir(config: RunConfig, override: str | None = None) -> Path:
    """--output beats VMC_OUTPUT_DIR, which is a root for the config's output_dir."""
    if override:
        return Path(override)
    root = os.getenv("VMC_OUTPUT_DIR")
    return Path(root) / config.output_dir if root else Path(config.output_dir)


def _stamp(run_dir: Path, files: list, config: RunConfig, phase: str) -> None:
    write_manifest(run_dir, files, config_hash(config), code_version(), phase)


def write_summary(run_dir: Path, config: RunConfig) -> Path:
    """Render summary.md from whatever phase outputs exist in run_dir."""
    context = {**config_to_dict(config), "config_hash": config_hash(config), "code_version": code_version()}
    log = run_dir / "training_log.csv"
    if log.exists():
        rows = read_training_log(log)
        if rows:
            context["training"] = {**rows[-1], "steps": int(rows[-1]["step"]) + 1}
    measurement = run_dir / "samples" / "measurement.json"
    if measurement.exists():
        context["energy"] = json.loads(measurement.read_text())["energy_per_electron"]
    observables = run_dir / "analysis" / "observables.json"
    if observables.exists():
        context["observables"] = json.loads(observables.read_text())
    oracle = run_dir / "oracle.json"
    if oracle.exists():
        context["oracle"] = json.loads(oracle.read_text())
    return render_summary(run_dir / "summary.md", context)


# --- phases ---------------------------------------------------------------------

def phase_train(config: RunConfig, run_dir: Path, resume: Path | None = None) -> list:
    system = build_system(config)
    print(f"\nTraining {config.cell.n_up}+{config.cell.n_down} electrons on a "
          f"{config.cell.n_cells_x}x{config.cell.n_cells_y} {config.cell.shape} cell")
    for note in system.ansatz.notes:
        print(f"  Note: {note}")
    result = train_loop(config, system, run_dir, resume=resume, code_version=code_version())
    return [run_dir / "training_log.csv", result.checkpoint]


def phase_measure(config: RunConfig, run_dir: Path, checkpoint: Path, steps: int, seed: int) -> list:
    system = build_system(config)
    data = load_checkpoint(checkpoint, expected_walkers=config.sampler.walkers)
    samples_dir = run_dir / "samples"
    print(f"\nMeasuring {steps} sweeps from {checkpoint} (seed {seed})")
    measurement = measure_loop(config, system, data, steps, seed, samples_dir=samples_dir)
    files = save_measurement(samples_dir, measurement, config)
    total = measurement.energy_summary()["total"]
    print(f"✓ E = {total['mean']:.8f} ± {total['se']:.2e} W per electron")
    return files + sorted(samples_dir.glob("snapshot_*.csv"))


def phase_analyze(config: RunConfig, samples_dir: Path, output_dir: Path, checkpoint: Path | None = None) -> list:
    system = build_system(config)
    params = None
    if checkpoint is not None:
        data = load_checkpoint(checkpoint)
        _, _, unravel = params_template(config, system)
        params = unravel(data.params)
    print(f"\nAnalyzing {samples_dir}")
    report = analyze_samples(system, samples_dir, output_dir, config, params=params)
    if "absZ" in report:
        print(f"  |Z| = {report['absZ']:.4f} ± {report['se']:.4f}")
    if "f_m" in report:
        print(f"  f_m = {report['f_m']:.4f} (f_o {report['f_o']:.4f}, f_u {report['f_u']:.4f}), "
              f"valid molecules in {report['validity_fraction']:.1%} of snapshots")
    print(f"✓ Wrote {len(report['files'])} files to {output_dir}")
    return [Path(p) for p in report["files"]]


def phase_oracle(config: RunConfig, run_dir: Path, grid_n: int | None = None) -> list:
    system = build_system(config)
    n = grid_n or config.oracle.grid_n
    print(f"\nExact diagonalization, grid {n} and {n * 3 // 2}")
    result = ed_oracle(system.cell, system.geometry, system.hamiltonian, n,
                       max_bytes=config.oracle.max_mib * 1024**2, verbose=True)
    path = run_dir / "oracle.json"
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump({
            "levels": [[g, e] for g, e in zip(result.grid_sizes, result.energies)],
            "extrapolated": result.extrapolated,
            "per_electron": result.energy_per_electron,
            "softening_am": config.hamiltonian.softening_am,
        }, f, indent=2)
    print(f"✓ Extrapolated ground energy {result.extrapolated:.10f} W ({result.energy_per_electron:.10f} per electron)")
    return [path]


def run_phases(config: RunConfig, run_dir: Path, resume: Path | None = None) -> dict:
    """
    Run config.phases in order. Each phase writes into its own place under
    run_dir and is stamped into the manifest as soon as it finishes.
    """
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = write_resolved(config, run_dir / "config.resolved.json")
    _stamp(run_dir, [resolved], config, "config")
    artifacts = {}
    for phase in config.phases:
        if phase == "train":
            files = phase_train(config, run_dir, resume)
        elif phase == "measure":
            checkpoint = latest_checkpoint(run_dir / "checkpoints")
            if checkpoint is None:
                raise CheckpointError(f"No checkpoint under {run_dir / 'checkpoints'}; run the train phase first")
            files = phase_measure(config, run_dir, checkpoint, config.measure.steps, config.seed)
        else:
            files = phase_analyze(config, run_dir / "samples", run_dir / "analysis",
                                  latest_checkpoint(run_dir / "checkpoints"))
        _stamp(run_dir, files, config, phase)
        artifacts[phase] = files
    summary = write_summary(run_dir, config)
    _stamp(run_dir, [summary], config, "summary")
    return artifacts


# --- commands -------------------------------------------------------------------

def cmd_train(args):
    config = parse_config(args.config)
    run_dir = resolve_run_dir(config, args.output)
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = write_resolved(config, run_dir / "config.resolved.json")
    files = phase_train(config, run_dir, Path(args.resume) if args.resume else None)
    _stamp(run_dir, [resolved, *files], config, "train")
    _stamp(run_dir, [write_summary(run_dir, config)], config, "summary")


def cmd_measure(args):
    checkpoint = Path(args.ckpt)
    data = load_checkpoint(checkpoint)
    config = config_from_dict(data.config)
    run_dir = Path(args.output) if args.output else checkpoint.resolve().parent.parent
    seed = config.seed if args.seed is None else args.seed
    files = phase_measure(config, run_dir, checkpoint, args.steps, seed)
    _stamp(run_dir, files, config, "measure")
    _stamp(run_dir, [write_summary(run_dir, config)], config, "summary")


def cmd_analyze(args):
    samples_dir = Path(args.samples)
    resolved = samples_dir / "config.resolved.json"
    config_path = Path(args.config) if args.config else resolved
    if not config_path.exists():
        raise ConfigError([f"<file>: {resolved} not found; pass --config for snapshot-only directories"])
    config = parse_config(config_path)
    run_dir = samples_dir.resolve().parent
    output_dir = Path(args.output) if args.output else run_dir / "analysis"
    files = phase_analyze(config, samples_dir, output_dir, Path(args.ckpt) if args.ckpt else None)
    _stamp(run_dir, files, config, "analyze")
    _stamp(run_dir, [write_summary(run_dir, config)], config, "summary")


def cmd_oracle(args):
    config = parse_config(args.config)
    run_dir = resolve_run_dir(config, args.output)
    files = phase_oracle(config, run_dir, args.grid_n)
    _stamp(run_dir, files, config, "oracle")
    _stamp(run_dir, [write_summary(run_dir, config)], config, "summary")


def cmd_run(args):
    config = parse_config(args.config)
    run_dir = resolve_run_dir(config, args.output)
    run_phases(config, run_dir, Path(args.resume) if args.resume else None)
    print(f"\n✓ Run complete: {run_dir}")


def main():
    parser = argparse.ArgumentParser(
        description="Variational Monte Carlo for electrons in a honeycomb moire potential"
    )
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    # train command
    train_parser = subparsers.add_parser("train", help="Optimize the wavefunction")
    train_parser.add_argument("--config", "-c", required=True, help="Run configuration (JSON)")
    train_parser.add_argument("--resume", "-r", help="Checkpoint to continue from")
    train_parser.add_argument("--output", "-o", help="Run directory (overrides the config)")

    # measure command
    measure_parser = subparsers.add_parser("measure", help="Sample a checkpoint and accumulate observables")
    measure_parser.add_argument("--ckpt", required=True, help="Checkpoint file")
    measure_parser.add_argument("--steps", "-n", type=int, required=True, help="Number of sweeps")
    measure_parser.add_argument("--seed", type=int, help="Sampling seed (defaults to the run seed)")
    measure_parser.add_argument("--output", "-o", help="Run directory (defaults to the checkpoint's run)")

    # analyze command
    analyze_parser = subparsers.add_parser("analyze", help="Compute observables from samples")
    analyze_parser.add_argument("--samples", "-s", required=True, help="Directory with accumulators and/or snapshots")
    analyze_parser.add_argument("--config", "-c", help="Run configuration, if the directory has no resolved copy")
    analyze_parser.add_argument("--ckpt", help="Checkpoint for parameter-based outputs (BCS occupation amplitudes)")
    analyze_parser.add_argument("--output", "-o", help="Output directory")

    # oracle command
    oracle_parser = subparsers.add_parser("oracle", help="Two-electron exact diagonalization")
    oracle_parser.add_argument("--config", "-c", required=True, help="Run configuration (JSON)")
    oracle_parser.add_argument("--grid-n", type=int, help="Coarse grid size (overrides the config)")
    oracle_parser.add_argument("--output", "-o", help="Run directory")

    # run command
    run_parser = subparsers.add_parser("run", help="Run every configured phase")
    run_parser.add_argument("--config", "-c", required=True, help="Run configuration (JSON)")
    run_parser.add_argument("--resume", "-r", help="Checkpoint to continue training from")
    run_parser.add_argument("--output", "-o", help="Run directory (overrides the config)")

    args = parser.parse_args()

    commands = {
        "train": cmd_train,
        "measure": cmd_measure,
        "analyze": cmd_analyze,
        "oracle": cmd_oracle,
        "run": cmd_run,
    }
    if args.command not in commands:
        parser.print_help()
        return

    try:
        commands[args.command](args)
    except ConfigError as e:
        print(f"  ✗ {e}")
        sys.exit(EXIT_CONFIG)
    except (CheckpointError, OSError) as e:
        print(f"  ✗ {e}")
        sys.exit(EXIT_IO)
    except (NumericalError, FloatingPointError) as e:
        print(f"  ✗ {e}")
        sys.exit(EXIT_NUMERIC)
    except ValueError as e:
        print(f"  ✗ {e}")
        sys.exit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
