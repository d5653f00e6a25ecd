"""Covariate localization: rolling window, standardization, kernel weights."""

from __future__ import annotations

import math

import numpy as np

from .quantiles import WeightedScoreDistribution

# kernel sums at or below this are treated as numerically zero
KERNEL_UNDERFLOW = 1e-300
# standard deviations below this are considered unstable and replaced by 1
SD_FLOOR = 1e-12


class CalibrationWindow:
    """Rolling buffer of the last ``capacity`` (covariate, score) pairs.

    Backed by a buffer of twice the capacity so that the live entries are
    always a contiguous slice in arrival order; compaction happens once per
    ``capacity`` pushes.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        if dim < 0:
            raise ValueError("covariate dimension must be >= 0")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._x = np.empty((2 * self.capacity, self.dim))
        self._s = np.empty(2 * self.capacity)
        self._start = 0
        self._stop = 0

    def __len__(self) -> int:
        return self._stop - self._start

    @property
    def covariates(self) -> np.ndarray:
        return self._x[self._start:self._stop]

    @property
    def scores(self) -> np.ndarray:
        return self._s[self._start:self._stop]

    def push(self, covariate, score: float) -> None:
        x = _as_vector(covariate, self.dim)
        score = float(score)
        if math.isnan(score):
            raise ValueError("NaN score")
        if self._stop == self._x.shape[0]:
            n = len(self)
            self._x[:n] = self._x[self._start:self._stop]
            self._s[:n] = self._s[self._start:self._stop]
            self._start, self._stop = 0, n
        self._x[self._stop] = x
        self._s[self._stop] = score
        self._stop += 1
        if len(self) > self.capacity:
            self._start += 1

    def copy(self) -> "CalibrationWindow":
        new = CalibrationWindow(self.capacity, self.dim)
        for x, s in zip(self.covariates, self.scores):
            new.push(x, s)
        return new


def _as_vector(x, dim: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if v.size != dim:
        raise ValueError(f"covariate dimension mismatch: expected {dim}, got {v.size}")
    return v


def standardize(covariates: np.ndarray, query) -> tuple[np.ndarray, np.ndarray]:
    """Standardize window covariates and the query with the window's mean and population sd.

    The query does not enter the statistics. Unstable coordinates (sd zero,
    tiny or non-finite) are only centered.
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    if covariates.shape[0] == 0:
        raise ValueError("empty calibration window")
    q = _as_vector(query, covariates.shape[1])
    mean = covariates.mean(axis=0)
    sd = covariates.std(axis=0)
    sd = np.where(np.isfinite(sd) & (sd > SD_FLOOR), sd, 1.0)
    return (covariates - mean) / sd, (q - mean) / sd


def standardized_distances(covariates: np.ndarray, query) -> np.ndarray:
    """Euclidean distances from the query to each window covariate after standardization."""
    z, zq = standardize(covariates, query)
    return np.sqrt(((z - zq) ** 2).sum(axis=1))


def kernel_weights(distances: np.ndarray, h: float) -> np.ndarray:
    """Normalized exponential-kernel weights ``exp(-d/h)``; uniform if the kernel sum underflows."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    k = np.exp(-np.asarray(distances, dtype=float) / h)
    total = k.sum()
    if not total > KERNEL_UNDERFLOW:
        return np.full(k.shape, 1.0 / k.size)
    return k / total


def local_weights(window: CalibrationWindow, query, h: float) -> np.ndarray:
    if len(window) == 0:
        raise ValueError("empty calibration window")
    return kernel_weights(standardized_distances(window.covariates, query), h)


def localized_distribution(window: CalibrationWindow, query, h: float) -> WeightedScoreDistribution:
    return WeightedScoreDistribution(window.scores.copy(), local_weights(window, query, h))


def silverman_bandwidth(d: int, R: int) -> float:
    """Base bandwidth ``(4/(d+2))^(1/(d+4)) * R^(-1/(d+4)) * sqrt(d)``.

    The trailing ``sqrt(d)`` matches the typical distance between points in
    ``d`` standardized coordinates.
    """
    if d < 1 or R < 1:
        raise ValueError("d and R must be >= 1")
    p = 1.0 / (d + 4)
    return (4.0 / (d + 2)) ** p * R ** (-p) * math.sqrt(d)
