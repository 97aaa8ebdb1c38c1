#!/usr/bin/env python3
"""
checkpoint.py - Versioned, atomically written training checkpoints

This module handles:
- Packing parameters, SPRING memory, walkers, rng streams, geometry and the
  resolved config into one .npz file with an embedded JSON manifest
- sha256 integrity checks per array on load (truncated or edited files are
  rejected before anything is returned)
- Version and walker-count checks on restore
"""

import hashlib
import json
import os
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

CHECKPOINT_VERSION = 1
MANIFEST_KEY = "__manifest__"


class CheckpointError(Exception):
    """Unreadable, corrupted, incompatible or mismatched checkpoint."""


@dataclass(frozen=True)
class CheckpointData:
    """Everything needed to continue a run; params are the flattened real vector."""
    step: int
    params: np.ndarray
    prev_update: np.ndarray
    damping: float
    spring_step: int
    learning_rate: float
    positions: np.ndarray
    log_abs: np.ndarray
    drift: np.ndarray
    keys: np.ndarray
    tau: float
    acceptance: np.ndarray  # inverse_sum, count, accepted, nonfinite
    minima_sites: np.ndarray
    ring_centers: np.ndarray
    config: dict
    nan_restarts: int = 0
    code_version: str = ""

    @property
    def n_walkers(self) -> int:
        return int(self.positions.shape[0])


ARRAY_FIELDS = (
    "params", "prev_update", "positions", "log_abs", "drift", "keys",
    "acceptance", "minima_sites", "ring_centers",
)
SCALAR_FIELDS = ("step", "damping", "spring_step", "learning_rate", "tau", "nan_restarts", "code_version")


def _digest(array: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(array).tobytes()).hexdigest()


def save_checkpoint(path: Path, data: CheckpointData) -> Path:
    """Write to a temporary file in the same directory, then rename over path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.asarray(getattr(data, name)) for name in ARRAY_FIELDS}
    manifest = {
        "version": CHECKPOINT_VERSION,
        "scalars": {name: getattr(data, name) for name in SCALAR_FIELDS},
        "config": data.config,
        "arrays": {
            name: {"shape": list(a.shape), "dtype": str(a.dtype), "sha256": _digest(a)}
            for name, a in arrays.items()
        },
    }
    encoded = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays, **{MANIFEST_KEY: encoded})
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Path, expected_walkers: Optional[int] = None) -> CheckpointData:
    """
    Read and verify a checkpoint. Any integrity problem raises CheckpointError
    and nothing is returned.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as f:
            contents = {key: f[key] for key in f.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e

    if MANIFEST_KEY not in contents:
        raise CheckpointError(f"{path}: no manifest; not a checkpoint written by this runner")
    try:
        manifest = json.loads(contents.pop(MANIFEST_KEY).tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupted manifest ({e})") from e

    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} cannot be read by this runner (version "
            f"{CHECKPOINT_VERSION}); no migration exists, re-run training or use a matching release"
        )

    for name in ARRAY_FIELDS:
        entry = manifest["arrays"].get(name)
        if entry is None or name not in contents:
            raise CheckpointError(f"{path}: missing array '{name}'")
        array = contents[name]
        if list(array.shape) != entry["shape"] or str(array.dtype) != entry["dtype"]:
            raise CheckpointError(f"{path}: array '{name}' has shape {array.shape}, manifest says {entry['shape']}")
        if _digest(array) != entry["sha256"]:
            raise CheckpointError(f"{path}: checksum mismatch in '{name}'")

    scalars = manifest["scalars"]
    data = CheckpointData(
        **{name: contents[name] for name in ARRAY_FIELDS},
        step=int(scalars["step"]),
        damping=float(scalars["damping"]),
        spring_step=int(scalars["spring_step"]),
        learning_rate=float(scalars["learning_rate"]),
        tau=float(scalars["tau"]),
        nan_restarts=int(scalars.get("nan_restarts", 0)),
        code_version=str(scalars.get("code_version", "")),
        config=manifest["config"],
    )
    if expected_walkers is not None and data.n_walkers != expected_walkers:
        raise CheckpointError(
            f"{path}: checkpoint holds {data.n_walkers} walkers but the run is configured for "
            f"{expected_walkers}; walker counts cannot change across a restore"
        )
    return data


def checkpoint_path(directory: Path, step: int) -> Path:
    return Path(directory) / f"ckpt_{step:06d}.npz"


def latest_checkpoint(directory: Path) -> Optional[Path]:
    """Newest complete checkpoint in directory (temporary files are ignored)."""
    candidates = sorted(Path(directory).glob("ckpt_*.npz"))
    return candidates[-1] if candidates else None
