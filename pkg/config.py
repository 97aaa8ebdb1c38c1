#!/usr/bin/env python3
"""
config.py - Run configuration for the VMC runner

This module handles:
- Reading a JSON run file into frozen dataclasses with the default
  hyperparameters filled in
- Field validation (each validator returns (is_valid, normalized, error))
- Rejecting unknown keys and inconsistent electron counts with
  section.field diagnostics
- Writing the resolved copy that sits next to the run outputs
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ansatz import MODES
from lattice import SHAPES, build_cell
from sampler import INIT_STRATEGIES, PROPOSALS_PER_SWEEP

SCHEMA_VERSION = 1
PHASES = ("train", "measure", "analyze")
REQUIRED_SECTIONS = ("cell", "hamiltonian")


class ConfigError(ValueError):
    """Schema violations, collected as 'section.field: message' lines."""

    def __init__(self, errors: list):
        self.errors = list(errors)
        super().__init__("Invalid run configuration:\n" + "\n".join(f"  {e}" for e in self.errors))


@dataclass(frozen=True)
class CellSpec:
    shape: str = "triangular"
    n_cells_x: int = 4
    n_cells_y: int = 4
    r_s: float = 10.0
    nu_m: float = 0.25
    n_up: Optional[int] = None
    n_down: Optional[int] = None


@dataclass(frozen=True)
class HamiltonianSpec:
    """r_s None means the cell's r_s; softening_am is in units of a_m (0 = Ewald)."""
    v_m_over_w: float = 0.0
    r_s: Optional[float] = None
    phi_degrees: float = 60.0
    ewald_alpha: Optional[float] = None
    ewald_rmax: Optional[float] = None
    ewald_kmax: Optional[float] = None
    softening_am: float = 0.0


@dataclass(frozen=True)
class AnsatzSpec:
    mode: str = "slater"
    n_layers: int = 3
    attention_width: int = 32
    message_width: int = 32
    one_body_width: int = 32
    one_body_depth: int = 2
    pair_width: int = 26
    pair_depth: int = 2
    backflow_widths: tuple = (32, 2)
    jastrow_widths: tuple = (32, 32, 1)
    n_planewaves: Optional[int] = None
    n_orb: Optional[int] = None
    backflow: bool = True
    neural_jastrow: bool = True
    cck: bool = True


@dataclass(frozen=True)
class OptimizerSpec:
    steps: int = 1000
    learning_rate: float = 0.1
    decay: float = 1000.0
    damping: float = 1e-3
    momentum: float = 0.9
    max_flagged_fraction: float = 1e-3


@dataclass(frozen=True)
class SamplerSpec:
    walkers: int = 1024
    warmup_sweeps: int = 2000
    proposals_per_sweep: int = PROPOSALS_PER_SWEEP
    init: str = "minima"
    tau: Optional[float] = None
    tau_max: Optional[float] = None
    adapt_rate: float = 1.0


@dataclass(frozen=True)
class MeasureSpec:
    steps: int = 200
    density_resolution: int = 48
    pair_bins: int = 64
    snapshot_every: int = 10


@dataclass(frozen=True)
class AnalysisSpec:
    theta_bins: int = 36
    dipole_bins: int = 36
    com_bins: int = 64
    linecut_points: int = 200
    voronoi_resolution: int = 48


@dataclass(frozen=True)
class OracleSpec:
    grid_n: int = 20
    max_mib: int = 4096


@dataclass(frozen=True)
class RunConfig:
    cell: CellSpec
    hamiltonian: HamiltonianSpec
    ansatz: AnsatzSpec = field(default_factory=AnsatzSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    phases: tuple = ("train",)
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 100
    schema_version: int = SCHEMA_VERSION


SECTIONS = {
    "cell": CellSpec,
    "hamiltonian": HamiltonianSpec,
    "ansatz": AnsatzSpec,
    "optimizer": OptimizerSpec,
    "sampler": SamplerSpec,
    "measure": MeasureSpec,
    "analysis": AnalysisSpec,
    "oracle": OracleSpec,
}


# --- validators -------------------------------------------------------------

def validate_int(value, minimum: Optional[int] = None) -> tuple[bool, int, str]:
    if isinstance(value, bool) or not isinstance(value, int):
        return False, value, f"expected an integer, got {value!r}"
    if minimum is not None and value < minimum:
        return False, value, f"must be at least {minimum}, got {value}"
    return True, value, ""


def validate_float(value, positive: bool = False, non_negative: bool = False) -> tuple[bool, float, str]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False, value, f"expected a number, got {value!r}"
    value = float(value)
    if not math.isfinite(value):
        return False, value, f"must be finite, got {value}"
    if positive and value <= 0:
        return False, value, f"must be positive, got {value}"
    if non_negative and value < 0:
        return False, value, f"must be non-negative, got {value}"
    return True, value, ""


def validate_momentum(value) -> tuple[bool, float, str]:
    ok, value, error = validate_float(value, non_negative=True)
    if ok and value >= 1:
        return False, value, f"must lie in [0, 1), got {value}"
    return ok, value, error


def validate_choice(value, choices) -> tuple[bool, str, str]:
    if not isinstance(value, str) or value.strip().lower() not in choices:
        return False, value, f"invalid value {value!r}. Choose from: {', '.join(choices)}"
    return True, value.strip().lower(), ""


def validate_bool(value) -> tuple[bool, bool, str]:
    if not isinstance(value, bool):
        return False, value, f"expected true or false, got {value!r}"
    return True, value, ""


def validate_widths(value) -> tuple[bool, tuple, str]:
    if not isinstance(value, (list, tuple)) or not value:
        return False, value, f"expected a non-empty list of layer widths, got {value!r}"
    for width in value:
        ok, _, error = validate_int(width, minimum=1)
        if not ok:
            return False, value, f"layer width {error}"
    return True, tuple(value), ""


def validate_phases(value) -> tuple[bool, tuple, str]:
    if not isinstance(value, (list, tuple)) or not value:
        return False, value, f"expected a non-empty list of phases, got {value!r}"
    normalized = []
    for phase in value:
        ok, phase, error = validate_choice(phase, PHASES)
        if not ok:
            return False, value, error
        normalized.append(phase)
    return True, tuple(normalized), ""


def _optional(validator, *args, **kwargs):
    def check(value):
        if value is None:
            return True, None, ""
        return validator(value, *args, **kwargs)
    return check


FIELD_RULES = {
    "cell": {
        "shape": lambda v: validate_choice(v, SHAPES),
        "n_cells_x": lambda v: validate_int(v, 1),
        "n_cells_y": lambda v: validate_int(v, 1),
        "r_s": lambda v: validate_float(v, positive=True),
        "nu_m": lambda v: validate_float(v, positive=True),
        "n_up": _optional(validate_int, 0),
        "n_down": _optional(validate_int, 0),
    },
    "hamiltonian": {
        "v_m_over_w": lambda v: validate_float(v, non_negative=True),
        "r_s": _optional(validate_float, non_negative=True),
        "phi_degrees": validate_float,
        "ewald_alpha": _optional(validate_float, positive=True),
        "ewald_rmax": _optional(validate_float, positive=True),
        "ewald_kmax": _optional(validate_float, positive=True),
        "softening_am": lambda v: validate_float(v, non_negative=True),
    },
    "ansatz": {
        "mode": lambda v: validate_choice(v, MODES),
        "n_layers": lambda v: validate_int(v, 1),
        "attention_width": lambda v: validate_int(v, 1),
        "message_width": lambda v: validate_int(v, 1),
        "one_body_width": lambda v: validate_int(v, 1),
        "one_body_depth": lambda v: validate_int(v, 1),
        "pair_width": lambda v: validate_int(v, 1),
        "pair_depth": lambda v: validate_int(v, 1),
        "backflow_widths": validate_widths,
        "jastrow_widths": validate_widths,
        "n_planewaves": _optional(validate_int, 1),
        "n_orb": _optional(validate_int, 1),
        "backflow": validate_bool,
        "neural_jastrow": validate_bool,
        "cck": validate_bool,
    },
    "optimizer": {
        "steps": lambda v: validate_int(v, 0),
        "learning_rate": lambda v: validate_float(v, positive=True),
        "decay": lambda v: validate_float(v, positive=True),
        "damping": lambda v: validate_float(v, positive=True),
        "momentum": validate_momentum,
        "max_flagged_fraction": lambda v: validate_float(v, non_negative=True),
    },
    "sampler": {
        "walkers": lambda v: validate_int(v, 2),
        "warmup_sweeps": lambda v: validate_int(v, 0),
        "proposals_per_sweep": lambda v: validate_int(v, 1),
        "init": lambda v: validate_choice(v, INIT_STRATEGIES),
        "tau": _optional(validate_float, positive=True),
        "tau_max": _optional(validate_float, positive=True),
        "adapt_rate": lambda v: validate_float(v, non_negative=True),
    },
    "measure": {
        "steps": lambda v: validate_int(v, 1),
        "density_resolution": lambda v: validate_int(v, 32),
        "pair_bins": lambda v: validate_int(v, 4),
        "snapshot_every": lambda v: validate_int(v, 1),
    },
    "analysis": {
        "theta_bins": lambda v: validate_int(v, 4),
        "dipole_bins": lambda v: validate_int(v, 4),
        "com_bins": lambda v: validate_int(v, 4),
        "linecut_points": lambda v: validate_int(v, 2),
        "voronoi_resolution": lambda v: validate_int(v, 32),
    },
    "oracle": {
        "grid_n": lambda v: validate_int(v, 4),
        "max_mib": lambda v: validate_int(v, 1),
    },
}

TOP_LEVEL_RULES = {
    "schema_version": lambda v: validate_int(v, 1),
    "phases": validate_phases,
    "seed": lambda v: validate_int(v, 0),
    "output_dir": lambda v: (True, v, "") if isinstance(v, str) and v else (False, v, "expected a non-empty path"),
    "checkpoint_every": lambda v: validate_int(v, 1),
}


def _parse_section(name: str, raw, errors: list):
    spec_cls = SECTIONS[name]
    if not isinstance(raw, dict):
        errors.append(f"{name}: expected an object, got {type(raw).__name__}")
        return spec_cls()
    known = {f.name for f in fields(spec_cls)}
    values = {}
    for key, value in raw.items():
        if key not in known:
            errors.append(f"{name}.{key}: unknown key (allowed: {', '.join(sorted(known))})")
            continue
        ok, normalized, error = FIELD_RULES[name][key](value)
        if ok:
            values[key] = normalized
        else:
            errors.append(f"{name}.{key}: {error}")
    return spec_cls(**values)


def _resolve(config: RunConfig, errors: list) -> RunConfig:
    """Fill spin counts and the interaction prefactor, checking them against the tiling."""
    cell = config.cell
    n_total = 2 * cell.nu_m * cell.n_cells_x * cell.n_cells_y
    n_up, n_down = cell.n_up, cell.n_down
    if n_up is None and n_down is None:
        if abs(n_total - round(n_total)) > 1e-9:
            errors.append(f"cell.nu_m: filling {cell.nu_m} on {cell.n_cells_x}x{cell.n_cells_y} cells gives {n_total:g} electrons")
            return config
        n_up = int(math.ceil(round(n_total) / 2))
        n_down = int(round(n_total)) - n_up
    elif n_up is None or n_down is None:
        errors.append("cell.n_up: give both n_up and n_down, or neither for a balanced cell")
        return config

    try:
        build_cell(cell.shape, cell.n_cells_x, cell.n_cells_y, cell.r_s, cell.nu_m, n_up, n_down)
    except ValueError as e:
        errors.append(f"cell: {e}")
        return config

    if config.ansatz.mode == "bcs" and n_up != n_down:
        errors.append(f"ansatz.mode: bcs needs n_up == n_down, got ({n_up}, {n_down})")

    hamiltonian = config.hamiltonian
    r_s = cell.r_s if hamiltonian.r_s is None else hamiltonian.r_s
    return replace(
        config,
        cell=replace(cell, n_up=n_up, n_down=n_down),
        hamiltonian=replace(hamiltonian, r_s=r_s),
    )


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a decoded JSON document and return the resolved RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError([f"<root>: expected an object, got {type(raw).__name__}"])

    errors = []
    allowed = set(SECTIONS) | set(TOP_LEVEL_RULES)
    for key in raw:
        if key not in allowed:
            errors.append(f"{key}: unknown key (allowed: {', '.join(sorted(allowed))})")
    for name in REQUIRED_SECTIONS:
        if name not in raw:
            errors.append(f"{name}: required section is missing")
    if "hamiltonian" in raw and isinstance(raw["hamiltonian"], dict) and "v_m_over_w" not in raw["hamiltonian"]:
        errors.append("hamiltonian.v_m_over_w: required field is missing")

    sections = {name: _parse_section(name, raw[name], errors) for name in SECTIONS if name in raw}
    top = {}
    for key, rule in TOP_LEVEL_RULES.items():
        if key in raw:
            ok, normalized, error = rule(raw[key])
            if ok:
                top[key] = normalized
            else:
                errors.append(f"{key}: {error}")
    if top.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        errors.append(f"schema_version: this runner reads version {SCHEMA_VERSION}, got {top['schema_version']}")
    if errors:
        raise ConfigError(errors)

    config = RunConfig(**sections, **top)
    config = _resolve(config, errors)
    if errors:
        raise ConfigError(errors)
    return config


def parse_config(path: Path) -> RunConfig:
    """Read and resolve a run file; JSON syntax errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError([f"<file>: cannot read {path}: {e.strerror}"]) from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"<json>: {path}:{e.lineno}:{e.colno}: {e.msg}"]) from e
    return config_from_dict(raw)


def config_to_dict(config: RunConfig) -> dict:
    """Plain JSON-ready dict with every default written out."""
    data = asdict(config)
    data["phases"] = list(config.phases)
    for key in ("backflow_widths", "jastrow_widths"):
        data["ansatz"][key] = list(data["ansatz"][key])
    return data


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_resolved(config: RunConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config_to_dict(config), f, indent=2)
        f.write("\n")
    return path
