#!/usr/bin/env python3
"""
report.py - Run artifacts: manifest, density images, human summary

This module handles:
- manifest.json: every artifact with its sha256, the config hash and the code version
- Charge and spin density maps drawn in real space with Pillow
- summary.md rendered from templates/summary.md.j2 with Jinja2
"""

import hashlib
import json
import math
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np
from jinja2 import Environment, FileSystemLoader
from PIL import Image, ImageOps

from lattice import SimulationCell

PROJECT_ROOT = Path(__file__).parent
TEMPLATES_PATH = PROJECT_ROOT / "templates"
PACKAGE_NAME = "moire-pwc"
IMAGE_SIZE = 512


def code_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "unknown"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(run_dir: Path, files: list, config_digest: str, version: str, phase: str) -> Path:
    """
    Add files to run_dir/manifest.json (paths relative to run_dir). Entries of
    earlier phases are kept; re-written files get their new hash.
    """
    run_dir = Path(run_dir)
    path = run_dir / "manifest.json"
    manifest = {"artifacts": {}}
    if path.exists():
        with open(path) as f:
            manifest = json.load(f)

    for file in files:
        file = Path(file)
        if not file.exists():
            continue
        try:
            key = str(file.resolve().relative_to(run_dir.resolve()))
        except ValueError:
            key = str(file)
        manifest["artifacts"][key] = {"sha256": sha256_file(file), "bytes": file.stat().st_size, "phase": phase}

    manifest["config_hash"] = config_digest
    manifest["code_version"] = version
    manifest["updated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


# --- images ------------------------------------------------------------------

def _to_gray(values: np.ndarray, symmetric: bool) -> Image.Image:
    """Fractional-grid field (nx, ny) as an 8-bit image with x along the width."""
    v = np.nan_to_num(np.asarray(values, dtype=float))
    if symmetric:
        scale = np.max(np.abs(v)) or 1.0
        scaled = 0.5 + 0.5 * v / scale
    else:
        low, high = v.min(), v.max()
        scaled = (v - low) / (high - low) if high > low else np.zeros_like(v)
    return Image.fromarray(np.uint8(np.round(255 * scaled.T)), mode="L")


def _real_space(image: Image.Image, cell: SimulationCell, size: int = IMAGE_SIZE) -> Image.Image:
    """Map the fractional-grid image onto the supercell parallelogram."""
    nx, ny = image.size
    lattice = cell.lattice_matrix
    corners = np.array([[0, 0], lattice[0], lattice[1], lattice[0] + lattice[1]])
    (xmin, ymin), (xmax, ymax) = corners.min(axis=0), corners.max(axis=0)
    scale = size / max(xmax - xmin, ymax - ymin)
    width, height = max(1, math.ceil((xmax - xmin) * scale)), max(1, math.ceil((ymax - ymin) * scale))

    inv = np.linalg.inv(lattice)
    # output pixel (X, Y) -> r = (xmin + X/scale, ymax - Y/scale) -> grid (nx f_1, ny f_2)
    data = (
        nx * inv[0, 0] / scale, -nx * inv[1, 0] / scale, nx * (inv[0, 0] * xmin + inv[1, 0] * ymax),
        ny * inv[0, 1] / scale, -ny * inv[1, 1] / scale, ny * (inv[0, 1] * xmin + inv[1, 1] * ymax),
    )
    fill = (255, 255, 255) if image.mode == "RGB" else 255
    return image.transform((width, height), Image.Transform.AFFINE, data,
                           resample=Image.Resampling.BILINEAR, fillcolor=fill)


def write_density_images(output_dir: Path, charge: np.ndarray, spin: np.ndarray, cell: SimulationCell) -> list:
    """density_charge.png (dark = empty) and density_spin.png (blue down, red up)."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    charge_img = ImageOps.colorize(_to_gray(charge, symmetric=False), black="#0b0b2b", white="#ffe066", mid="#c0392b")
    spin_img = ImageOps.colorize(_to_gray(spin, symmetric=True), black="#1f4e9c", white="#b71c1c", mid="#ffffff")
    paths = []
    for name, image in (("density_charge.png", charge_img), ("density_spin.png", spin_img)):
        path = output_dir / name
        _real_space(image, cell).save(path, "PNG")
        paths.append(path)
    return paths


# --- summary -------------------------------------------------------------------

def format_value(value, digits: int = 6) -> str:
    """Jinja filter: numbers to fixed precision, everything else as text"""
    if isinstance(value, (int, float, np.floating)) and not isinstance(value, bool):
        if not math.isfinite(value):
            return "n/a"
        return f"{value:.{digits}g}"
    return str(value)


def render_summary(output_path: Path, context: dict, template: str = "summary.md.j2",
                   templates_path: Optional[Path] = None) -> Path:
    env = Environment(loader=FileSystemLoader(templates_path or TEMPLATES_PATH))
    env.filters["num"] = format_value
    text = env.get_template(template).render(**context)
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text(text)
    return output_path
