"""Exact output distributions of the mechanisms on small domains.

Each mechanism descriptor lists its outputs in a fixed order, so the
distributions for different inputs can be stacked and compared
column-wise. The LDP ratio is certified only over the finite input grid
supplied by the caller.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    DomainViolation,
    EmptyInput,
    Schema,
    TooLarge,
    as_epsilon,
    c_eps,
    p_keep,
)
from .mech_categorical import FrequencyMatrix
from .mech_numeric import FIXED, duchi_constants, onebit_plus_probability

MAX_OUTCOMES = 10 ** 6


@dataclass
class OutcomeDistribution:
    labels: list
    probs: np.ndarray
    values: np.ndarray | None = None  # decoded output per label, one row each

    @property
    def total_mass(self) -> float:
        return float(self.probs.sum())

    def __len__(self) -> int:
        return len(self.labels)

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.probs.tolist()))


def _sign_vectors(d: int) -> np.ndarray:
    return np.array(list(itertools.product((1, -1), repeat=d)), dtype=np.int64).reshape(-1, d)


@dataclass(frozen=True)
class OneBit:
    d: int
    name: str = "onebit"

    def size(self) -> int:
        return 2 * self.d

    def labels(self) -> list:
        return [(j + 1, s) for j in range(self.d) for s in (1, -1)]

    def distribution(self, t, epsilon: float) -> OutcomeDistribution:
        t = np.asarray(t, dtype=float)
        if t.shape != (self.d,):
            raise DomainViolation("input", t.tolist(), f"must have length {self.d}")
        plus = onebit_plus_probability(t, epsilon)
        probs = np.column_stack([plus, 1.0 - plus]).ravel() / self.d
        mag = self.d * c_eps(epsilon)
        values = np.zeros((2 * self.d, self.d))
        for j in range(self.d):
            values[2 * j, j] = mag
            values[2 * j + 1, j] = -mag
        return OutcomeDistribution(self.labels(), probs, values)


@dataclass(frozen=True)
class Duchi:
    d: int
    variant: str = FIXED
    name: str = "duchi"

    def size(self) -> int:
        return 2 ** self.d

    def labels(self) -> list:
        return [tuple(int(x) for x in w) for w in _sign_vectors(self.d)]

    def distribution(self, t, epsilon: float) -> OutcomeDistribution:
        t = np.asarray(t, dtype=float)
        if t.shape != (self.d,):
            raise DomainViolation("input", t.tolist(), f"must have length {self.d}")
        const = duchi_constants(self.d, epsilon, self.variant)
        # per-agreement-count output probability given v
        kernel = np.array(
            [
                const.p_u / const.plus_size if 2 * a > self.d else (1.0 - const.p_u) / const.minus_size
                for a in range(self.d + 1)
            ]
        )
        W = _sign_vectors(self.d)
        p_one = 0.5 + 0.5 * t
        probs = np.empty(len(W))
        for i, w in enumerate(W):
            # generating polynomial of the agreement count between w and v
            p_agree = np.where(w > 0, p_one, 1.0 - p_one)
            poly = np.array([1.0])
            for pa in p_agree:
                poly = np.convolve(poly, [1.0 - pa, pa])
            probs[i] = poly @ kernel
        return OutcomeDistribution(self.labels(), probs, const.B * W.astype(float))


@dataclass(frozen=True)
class RandomizedResponse:
    name: str = "rr"

    def size(self) -> int:
        return 2

    def labels(self) -> list:
        return [1, -1]

    def distribution(self, t, epsilon: float) -> OutcomeDistribution:
        value = int(np.asarray(t).ravel()[0])
        if value not in (1, -1):
            raise DomainViolation("value", value, "must be +1 or -1")
        p = p_keep(epsilon)
        probs = np.array([p, 1 - p]) if value == 1 else np.array([1 - p, p])
        c = c_eps(epsilon)
        return OutcomeDistribution(self.labels(), probs, np.array([[c], [-c]]))


@dataclass(frozen=True)
class BassilySmith:
    """Reports ``(s, sign of alpha)`` against one fixed frequency matrix."""

    matrix: FrequencyMatrix
    name: str = "bs"

    def size(self) -> int:
        return 2 * self.matrix.rows

    def labels(self) -> list:
        return [(s + 1, sg) for s in range(self.matrix.rows) for sg in (1, -1)]

    def distribution(self, t, epsilon: float) -> OutcomeDistribution:
        value = int(np.asarray(t).ravel()[0])
        if not 1 <= value <= self.matrix.k:
            raise DomainViolation("value", value, f"is not in 1..{self.matrix.k}")
        m = self.matrix.rows
        p = p_keep(epsilon)
        col = self.matrix.signs(np.arange(m), value - 1)
        # alpha's sign equals the column sign exactly when the coin keeps it
        plus = np.where(col > 0, p, 1 - p) / m
        probs = np.column_stack([plus, 1.0 / m - plus]).ravel()
        mag = c_eps(epsilon) * math.sqrt(m)
        values = np.zeros((2 * m, m))
        values[np.arange(0, 2 * m, 2), np.arange(m)] = mag
        values[np.arange(1, 2 * m, 2), np.arange(m)] = -mag
        return OutcomeDistribution(self.labels(), probs, values)


@dataclass(frozen=True)
class MultiAttribute:
    """One uniformly chosen attribute per user; categorical cells scaled by d.

    Decoded values are each report's contribution to the estimates: the
    numeric means first (schema order), then every categorical attribute's
    k frequency estimates.
    """

    schema: Schema
    matrices: Mapping[int, FrequencyMatrix] = field(hash=False)
    name: str = "multi"

    def size(self) -> int:
        return sum(2 if a.is_numeric else 2 * self.matrices[j].rows for j, a in enumerate(self.schema))

    def _layout(self) -> list[int]:
        offsets, pos = [], 0
        for j, a in enumerate(self.schema):
            offsets.append(pos)
            pos += 1 if a.is_numeric else a.k
        return offsets + [pos]

    def labels(self) -> list:
        out = []
        for j, a in enumerate(self.schema):
            if a.is_numeric:
                out += [(j + 1, "N", sg) for sg in (1, -1)]
            else:
                out += [(j + 1, "C", s + 1, sg) for s in range(self.matrices[j].rows) for sg in (1, -1)]
        return out

    def distribution(self, t, epsilon: float) -> OutcomeDistribution:
        d = len(self.schema)
        offsets = self._layout()
        probs, rows = [], []
        for j, a in enumerate(self.schema):
            if a.is_numeric:
                sub = OneBit(1).distribution([t[j]], epsilon)
                probs.append(sub.probs / d)
                vals = np.zeros((2, offsets[-1]))
                vals[:, offsets[j]] = d * sub.values[:, 0]
            else:
                mat = self.matrices[j]
                sub = BassilySmith(mat).distribution([t[j]], epsilon)
                probs.append(sub.probs / d)
                # contribution d * z . Phi[:, l] for every l
                block = mat.entries(np.arange(mat.rows)[:, None], np.arange(mat.k)[None, :])
                vals = np.zeros((len(sub), offsets[-1]))
                vals[:, offsets[j]:offsets[j + 1]] = d * sub.values @ block
            rows.append(vals)
        return OutcomeDistribution(self.labels(), np.concatenate(probs), np.vstack(rows))


def _check_size(mechanism) -> None:
    if mechanism.size() > MAX_OUTCOMES:
        raise TooLarge(f"{mechanism.name} has {mechanism.size()} outcomes, limit is {MAX_OUTCOMES}")


def enumerate_distribution(mechanism, t, epsilon) -> OutcomeDistribution:
    _check_size(mechanism)
    return mechanism.distribution(t, as_epsilon(epsilon))


@dataclass(frozen=True)
class RatioResult:
    ratio: float
    witness: tuple  # (numerator input, denominator input)
    output: object
    epsilon: float

    @property
    def bound(self) -> float:
        return math.exp(self.epsilon)

    def passes(self, tol: float = 1e-9) -> bool:
        return self.ratio <= self.bound + tol


def max_ldp_ratio(mechanism, grid: Iterable, epsilon) -> RatioResult:
    """Exact sup over grid input pairs and outputs of Pr[out|t] / Pr[out|t']."""
    eps = as_epsilon(epsilon)
    _check_size(mechanism)
    inputs = [tuple(np.atleast_1d(np.asarray(g)).tolist()) for g in grid]
    if not inputs:
        raise EmptyInput("empty input grid")
    P = np.vstack([mechanism.distribution(np.asarray(x), eps).probs for x in inputs])
    hi_idx = P.argmax(axis=0)
    lo_idx = P.argmin(axis=0)
    hi = P[hi_idx, np.arange(P.shape[1])]
    lo = P[lo_idx, np.arange(P.shape[1])]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(hi == 0, 1.0, hi / lo)
    out = int(np.argmax(ratios))
    labels = mechanism.labels()
    return RatioResult(float(ratios[out]), (inputs[hi_idx[out]], inputs[lo_idx[out]]), labels[out], eps)


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    variance: np.ndarray


def exact_moments(mechanism, t, epsilon) -> Moments:
    dist = enumerate_distribution(mechanism, t, epsilon)
    mean = dist.probs @ dist.values
    var = dist.probs @ (dist.values - mean) ** 2
    return Moments(mean, var)


# Input grids ------------------------------------------------------------------

LATTICE = (-1.0, -0.5, 0.0, 0.5, 1.0)


def corner_grid(d: int) -> list[tuple[float, ...]]:
    return [tuple(float(x) for x in c) for c in itertools.product((-1.0, 1.0), repeat=d)]


def lattice_grid(d: int, levels: Sequence[float] = LATTICE) -> list[tuple[float, ...]]:
    return list(itertools.product(levels, repeat=d))


def schema_grid(schema: Schema, levels: Sequence[float] = LATTICE) -> list[tuple]:
    axes = [levels if a.is_numeric else range(1, a.k + 1) for a in schema]
    return list(itertools.product(*axes))


def monte_carlo_check(dist: OutcomeDistribution, counts: np.ndarray, sigmas: float = 3.0) -> bool:
    """True when every empirical count is within ``sigmas`` standard errors."""
    n = counts.sum()
    expected = dist.probs * n
    se = np.sqrt(n * dist.probs * (1 - dist.probs))
    return bool(np.all(np.abs(counts - expected) <= sigmas * np.maximum(se, 1e-12) + 1e-9))


MECHANISMS = ("onebit", "duchi_original", "duchi_fixed", "rr", "bs", "multi")


def make_mechanism(name: str, *, d: int = 1, k: int = 4, rows: int | None = None, seed: int = 0, schema: Schema | None = None, matrices=None):
    """Build a descriptor by name (used by the CLI)."""
    from .mech_categorical import RANDOM_PROJECTION, build_orthogonal

    if name == "onebit":
        return OneBit(d)
    if name in ("duchi_original", "duchi_fixed"):
        return Duchi(d, name.split("_", 1)[1])
    if name == "rr":
        return RandomizedResponse()
    if name == "bs":
        if rows is None:
            return BassilySmith(build_orthogonal(k))
        return BassilySmith(FrequencyMatrix(RANDOM_PROJECTION, rows, k, seed=seed))
    if name == "multi":
        if schema is None:
            raise EmptyInput("multi mechanism needs a schema")
        if matrices is None:
            matrices = {j: build_orthogonal(schema[j].k) for j in schema.categorical_indices}
        return MultiAttribute(schema, matrices)
    raise ValueError(f"unknown mechanism {name!r}; choose from {', '.join(MECHANISMS)}")


def default_grid(mechanism) -> list:
    if isinstance(mechanism, (OneBit, Duchi)):
        return sorted(set(corner_grid(mechanism.d)) | set(lattice_grid(mechanism.d)))
    if isinstance(mechanism, RandomizedResponse):
        return [(1,), (-1,)]
    if isinstance(mechanism, BassilySmith):
        return [(v,) for v in range(1, mechanism.matrix.k + 1)]
    if isinstance(mechanism, MultiAttribute):
        return schema_grid(mechanism.schema)
    raise TypeError(f"no default grid for {mechanism!r}")
