"""Mergeable estimation accumulators and error metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import EmptyInput, LengthMismatch, as_epsilon
from .mech_categorical import FrequencyMatrix, accumulate_cells, estimate_from_zsum

# Multiplier on sqrt(d log(d/beta)) / (eps sqrt(n)); see finalize_means.
DEFAULT_BOUND_CONSTANT = 3.0


@dataclass
class MeanAccumulator:
    """Running per-attribute sums of decoded numeric reports."""

    d: int
    epsilon: float
    sums: np.ndarray = field(default=None)
    n: int = 0

    def __post_init__(self):
        self.epsilon = as_epsilon(self.epsilon)
        if self.sums is None:
            self.sums = np.zeros(self.d)

    def add(self, decoded) -> "MeanAccumulator":
        decoded = np.asarray(decoded, dtype=float)
        if decoded.ndim == 1:
            decoded = decoded[None, :]
        if decoded.shape[1] != self.d:
            raise LengthMismatch(f"decoded reports have {decoded.shape[1]} entries, expected {self.d}")
        self.sums = self.sums + decoded.sum(axis=0)
        self.n += decoded.shape[0]
        return self

    def add_sums(self, sums: np.ndarray, count: int) -> "MeanAccumulator":
        self.sums = self.sums + np.asarray(sums, dtype=float)
        self.n += int(count)
        return self

    def merge(self, other: "MeanAccumulator") -> "MeanAccumulator":
        if other.d != self.d or other.epsilon != self.epsilon:
            raise LengthMismatch("cannot merge accumulators of different shape or budget")
        return MeanAccumulator(self.d, self.epsilon, self.sums + other.sums, self.n + other.n)


@dataclass(frozen=True)
class MeanEstimate:
    estimate: np.ndarray
    deviation_bound: float
    n: int


def deviation_bound(d: int, epsilon: float, n: int, beta: float = 0.05, constant: float = DEFAULT_BOUND_CONSTANT) -> float:
    """c * sqrt(d log(d/beta)) / (eps sqrt(n)). Diagnostic only."""
    return constant * math.sqrt(d * math.log(d / beta)) / (epsilon * math.sqrt(n))


def finalize_means(acc: MeanAccumulator, beta: float = 0.05, constant: float = DEFAULT_BOUND_CONSTANT) -> MeanEstimate:
    if acc.n < 1:
        raise EmptyInput("no reports accumulated")
    return MeanEstimate(acc.sums / acc.n, deviation_bound(acc.d, acc.epsilon, acc.n, beta, constant), acc.n)


@dataclass
class FreqAccumulator:
    """z-bar numerator for one categorical attribute plus the user count.

    ``n`` counts every user of the population, including those whose report
    concerned another attribute, since the estimator divides by the full n.
    """

    matrix: FrequencyMatrix
    zsum: np.ndarray = field(default=None)
    n: int = 0

    def __post_init__(self):
        if self.zsum is None:
            self.zsum = np.zeros(self.matrix.rows)

    def add(self, s, alpha, users: int | None = None) -> "FreqAccumulator":
        s = np.atleast_1d(np.asarray(s, dtype=np.int64))
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.zsum = self.zsum + accumulate_cells(s, alpha, self.matrix.rows)
        self.n += len(s) if users is None else int(users)
        return self

    def merge(self, other: "FreqAccumulator") -> "FreqAccumulator":
        if other.matrix != self.matrix:
            raise LengthMismatch("cannot merge accumulators over different matrices")
        return FreqAccumulator(self.matrix, self.zsum + other.zsum, self.n + other.n)

    def finalize(self) -> np.ndarray:
        if self.n < 1:
            raise EmptyInput("no reports accumulated")
        return estimate_from_zsum(self.zsum, self.n, self.matrix)


def linf_error(estimate, truth) -> float:
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise LengthMismatch(f"lengths differ: {est.shape} vs {tru.shape}")
    if est.size == 0:
        return 0.0
    return float(np.max(np.abs(est - tru)))
