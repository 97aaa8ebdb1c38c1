#!/usr/bin/env python3
"""
estimators.py - Streaming Monte Carlo statistics

This module handles:
- EstimatorAccumulator: running count/mean/second moment for scalars or arrays,
  mergeable in any order (pairwise Chan update)
- Jackknife standard errors for nonlinear statistics such as |Z|
- Saving/loading accumulators as npz for the measure -> analyze hand-off
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np


@dataclass
class EstimatorAccumulator:
    """
    Running statistics of a real or complex observable of fixed shape.

    For complex values, m2 tracks sum |x - mean|^2, so variance is the
    variance of the complex estimator. With covariance=True (1D observables
    only) the full comoment matrix is tracked as well.
    """
    shape: tuple = ()
    dtype: type = float
    covariance: bool = False
    count: int = 0
    mean: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)
    comoment: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.shape, dtype=self.dtype)
        if self.m2 is None:
            self.m2 = np.zeros(self.shape)
        if self.covariance:
            if len(self.shape) != 1:
                raise ValueError(f"Covariance tracking needs a 1D observable, got shape {self.shape}")
            if self.comoment is None:
                self.comoment = np.zeros(self.shape * 2, dtype=self.dtype)

    def add_batch(self, values) -> "EstimatorAccumulator":
        """Fold in a batch of samples stacked along axis 0."""
        values = np.asarray(values, dtype=self.dtype)
        if values.shape[1:] != tuple(self.shape):
            raise ValueError(f"Expected samples of shape {self.shape}, got {values.shape[1:]}")
        if len(values) == 0:
            return self
        other = EstimatorAccumulator(shape=self.shape, dtype=self.dtype, covariance=self.covariance)
        other.count = len(values)
        other.mean = values.mean(axis=0)
        deviation = values - other.mean
        other.m2 = np.sum(np.abs(deviation) ** 2, axis=0)
        if self.covariance:
            other.comoment = deviation.T @ deviation.conj()
        self.merge(other)
        return self

    def add(self, value) -> "EstimatorAccumulator":
        return self.add_batch(np.asarray(value, dtype=self.dtype)[None])

    def merge(self, other: "EstimatorAccumulator") -> "EstimatorAccumulator":
        """Combine two disjoint sample sets in place."""
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            if self.covariance:
                self.comoment = other.comoment.copy()
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        weight = self.count * other.count / total
        self.m2 = self.m2 + other.m2 + np.abs(delta) ** 2 * weight
        if self.covariance:
            self.comoment = self.comoment + other.comoment + np.outer(delta, delta.conj()) * weight
        self.mean = self.mean + delta * other.count / total
        self.count = total
        return self

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full(self.shape, np.nan)
        return self.m2 / (self.count - 1)

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.variance / max(self.count, 1))

    @property
    def covariance_matrix(self) -> np.ndarray:
        if not self.covariance:
            raise ValueError("Accumulator was created without covariance tracking")
        return self.comoment / (self.count - 1)

    def to_arrays(self, prefix: str) -> dict:
        arrays = {f"{prefix}.count": np.asarray(self.count), f"{prefix}.mean": self.mean, f"{prefix}.m2": self.m2}
        if self.covariance:
            arrays[f"{prefix}.comoment"] = self.comoment
        return arrays

    @classmethod
    def from_arrays(cls, arrays, prefix: str) -> "EstimatorAccumulator":
        mean = np.asarray(arrays[f"{prefix}.mean"])
        comoment_key = f"{prefix}.comoment"
        has_cov = comoment_key in arrays
        return cls(
            shape=mean.shape,
            dtype=mean.dtype.type,
            covariance=has_cov,
            count=int(arrays[f"{prefix}.count"]),
            mean=mean,
            m2=np.asarray(arrays[f"{prefix}.m2"]),
            comoment=np.asarray(arrays[comoment_key]) if has_cov else None,
        )


def jackknife(samples, statistic: Callable = np.mean, n_blocks: Optional[int] = None) -> tuple[float, float]:
    """
    Delete-one-block jackknife of statistic(samples) over axis 0.

    Returns (estimate, standard_error); the estimate is statistic on all samples.
    """
    samples = np.asarray(samples)
    n = len(samples)
    if n < 2:
        raise ValueError(f"Jackknife needs at least 2 samples, got {n}")
    n_blocks = min(n, n_blocks or n)
    blocks = np.array_split(np.arange(n), n_blocks)
    full = statistic(samples)
    leave_out = np.array([
        statistic(np.delete(samples, block, axis=0)) for block in blocks
    ])
    spread = leave_out - leave_out.mean(axis=0)
    error = np.sqrt((n_blocks - 1) / n_blocks * np.sum(np.abs(spread) ** 2, axis=0))
    return full, error


def save_accumulators(path: Path, accumulators: dict) -> None:
    arrays = {}
    for name, acc in accumulators.items():
        arrays.update(acc.to_arrays(name))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_accumulators(path: Path) -> dict:
    with np.load(path) as data:
        arrays = {key: data[key] for key in data.files}
    names = sorted({key.rsplit(".", 1)[0] for key in arrays})
    return {name: EstimatorAccumulator.from_arrays(arrays, name) for name in names}
