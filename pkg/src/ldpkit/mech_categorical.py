"""Frequency oracles for a single categorical attribute.

Reports are ``<s, alpha>`` pairs against a frequency matrix with ``rows``
rows and ``k`` columns. Two matrix kinds exist:

``random_projection``
    entries ±1/sqrt(m), i.i.d. fair signs. The matrix is virtual: each entry
    is a hash of ``(seed, row, col)`` so a large ``m`` never allocates.
``orthogonal``
    the first ``k`` vectors of the recursive-doubling orthogonal set of
    length ``k'`` (``k`` rounded up to a power of two), scaled by 1/sqrt(k').

Row indices ``s`` are 1-based in reports and 0-based in batch arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    DegenerateParams,
    DomainViolation,
    EmptyInput,
    LengthMismatch,
    Overflow,
    RandomSource,
    as_epsilon,
    c_eps,
    p_keep,
)

RANDOM_PROJECTION = "random_projection"
ORTHOGONAL = "orthogonal"
AUTO = "auto"

MAX_ORTHOGONAL_ROWS = 2 ** 20
DEFAULT_BETA = 0.05


# Binary randomized response --------------------------------------------------


def rr_binary_perturb(value: int, epsilon, rng: RandomSource) -> float:
    """Report ``c_eps * value`` w.p. e^eps/(e^eps+1), else its negation."""
    if value not in (1, -1):
        raise DomainViolation("value", value, "must be +1 or -1")
    eps = as_epsilon(epsilon)
    keep = rng.uniform() < p_keep(eps)
    return c_eps(eps) * (value if keep else -value)


def rr_binary_perturb_batch(values: np.ndarray, epsilon, rng: RandomSource) -> np.ndarray:
    values = np.asarray(values)
    if not np.all(np.abs(values) == 1):
        raise DomainViolation("value", values[np.abs(values) != 1].flat[0], "must be +1 or -1")
    eps = as_epsilon(epsilon)
    keep = rng.uniform(values.shape) < p_keep(eps)
    return c_eps(eps) * np.where(keep, values, -values)


# Parameters --------------------------------------------------------------------


@dataclass(frozen=True)
class BSParams:
    k: int
    n: int
    epsilon: float
    beta: float
    gamma: float
    m: int


def bs_params(k: int, n: int, epsilon, beta: float = DEFAULT_BETA) -> BSParams:
    eps = as_epsilon(epsilon)
    if k < 2:
        raise DegenerateParams("k must be >= 2")
    if n < 1:
        raise DegenerateParams("n must be >= 1")
    if not 0.0 < beta < 1.0:
        raise DegenerateParams("beta must lie in (0, 1)")
    gamma = math.sqrt(math.log(2 * k / beta) / (eps * eps * n))
    m = math.ceil(math.log(k + 1) * math.log(2 / beta) / (gamma * gamma))
    if m < 1:
        raise DegenerateParams(f"computed m={m} < 1")
    return BSParams(k, n, eps, beta, gamma, m)


# Matrices ----------------------------------------------------------------------

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
    return x ^ (x >> np.uint64(31))


def _popcount_parity(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    for shift in (32, 16, 8, 4, 2, 1):
        x ^= x >> np.uint64(shift)
    return (x & np.uint64(1)).astype(np.int64)


@dataclass(frozen=True)
class FrequencyMatrix:
    """A virtual ``rows x k`` frequency matrix (see module docstring)."""

    kind: str
    rows: int
    k: int
    seed: int | None = None
    _log2_rows: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == ORTHOGONAL:
            if self.rows & (self.rows - 1) or self.rows < 2 or self.rows < self.k:
                raise DegenerateParams("orthogonal matrix needs power-of-two rows >= k")
            object.__setattr__(self, "_log2_rows", self.rows.bit_length() - 1)
        elif self.kind == RANDOM_PROJECTION:
            if self.seed is None:
                raise DegenerateParams("random projection needs a seed")
        else:
            raise ValueError(f"unknown matrix kind {self.kind!r}")

    @property
    def m(self) -> int:
        return self.rows

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.rows)

    def signs(self, rows, cols) -> np.ndarray:
        """±1 sign pattern at 0-based ``(rows, cols)``, broadcast together."""
        r = np.asarray(rows, dtype=np.uint64)
        c = np.asarray(cols, dtype=np.uint64)
        if self.kind == RANDOM_PROJECTION:
            key = _splitmix64(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(r))
            h = _splitmix64(key ^ (c * np.uint64(0xD1B54A32D192ED03) & _M64))
            return np.where(h >> np.uint64(63), 1, -1).astype(np.int64)
        mask = self._orthogonal_mask(c)
        return 1 - 2 * _popcount_parity(r & mask)

    def _orthogonal_mask(self, cols: np.ndarray) -> np.ndarray:
        # Vector index l = (i0, b_1 .. b_{L-1}) in doubling order; entry at
        # position s is (-1)^{<mask(l), s>} with mask bit 0 = 1 - i0 and
        # mask bit t = b_t.
        L = self._log2_rows
        cols = cols.astype(np.uint64)
        i0 = (cols >> np.uint64(L - 1)) & np.uint64(1)
        mask = np.uint64(1) - i0
        for t in range(1, L):
            bit = (cols >> np.uint64(L - 1 - t)) & np.uint64(1)
            mask = mask | (bit << np.uint64(t))
        return mask

    def entries(self, rows, cols) -> np.ndarray:
        return self.signs(rows, cols) * self.scale

    def column(self, col: int) -> np.ndarray:
        """Scaled 0-based column ``col`` as a dense vector of length ``rows``."""
        return self.entries(np.arange(self.rows), col)

    def dense_signs(self) -> np.ndarray:
        if self.rows * self.k > 50_000_000:
            raise Overflow("matrix too large to materialize")
        return self.signs(np.arange(self.rows)[:, None], np.arange(self.k)[None, :])


def build_projection(params: BSParams, seed: int) -> FrequencyMatrix:
    return FrequencyMatrix(RANDOM_PROJECTION, params.m, params.k, seed=int(seed))


def orthogonal_set(length: int) -> list[list[int]]:
    """The recursive-doubling orthogonal set of ``length`` vectors.

    Starts from ``[1, -1], [1, 1]`` and repeatedly replaces every vector
    ``v`` by ``v || v`` and ``v || -v``.
    """
    if length < 2 or length & (length - 1):
        raise DegenerateParams("length must be a power of two >= 2")
    if length > MAX_ORTHOGONAL_ROWS:
        raise Overflow(f"orthogonal set of size {length} exceeds {MAX_ORTHOGONAL_ROWS}")
    S = [[1, -1], [1, 1]]
    while len(S) < length:
        S = [w for v in S for w in (v + v, v + [-x for x in v])]
    return S


def padded_size(k: int) -> int:
    return 1 << max(1, (k - 1).bit_length())


def build_orthogonal(k: int) -> FrequencyMatrix:
    if k < 2:
        raise DegenerateParams("k must be >= 2")
    rows = padded_size(k)
    if rows > MAX_ORTHOGONAL_ROWS:
        raise Overflow(f"k'={rows} exceeds {MAX_ORTHOGONAL_ROWS}")
    return FrequencyMatrix(ORTHOGONAL, rows, k)


def choose_kind(k: int, n: int, kind: str = AUTO) -> str:
    if kind != AUTO:
        return kind
    return ORTHOGONAL if k <= math.sqrt(n) else RANDOM_PROJECTION


def build_matrix(k: int, n: int, epsilon, *, kind: str = AUTO, beta: float = DEFAULT_BETA, seed: int = 0) -> FrequencyMatrix:
    kind = choose_kind(k, n, kind)
    if kind == ORTHOGONAL:
        return build_orthogonal(k)
    return build_projection(bs_params(k, n, epsilon, beta), seed)


# Perturbation ------------------------------------------------------------------


@dataclass(frozen=True)
class CategoricalReport:
    s: int  # 1-based row
    alpha: float
    attr_index: int = 0


def _check_values(values, k: int) -> np.ndarray:
    arr = np.asarray(values)
    ok = (arr >= 1) & (arr <= k) & (arr == np.round(arr))
    if not np.all(ok):
        raise DomainViolation("value", arr[~ok].flat[0], f"is not in 1..{k}")
    return arr.astype(np.int64)


def bs_perturb(value: int, matrix: FrequencyMatrix, epsilon, rng: RandomSource) -> CategoricalReport:
    s, alpha = bs_perturb_batch(np.array([value]), matrix, epsilon, rng)
    return CategoricalReport(int(s[0]) + 1, float(alpha[0]))


def bs_perturb_batch(values, matrix: FrequencyMatrix, epsilon, rng: RandomSource):
    """Vectorized report generation; ``values`` are 1-based categories.

    Returns ``(s, alpha)`` with 0-based rows ``s``.
    """
    eps = as_epsilon(epsilon)
    v = _check_values(values, matrix.k)
    n = v.shape[0]
    s = rng.integers(matrix.rows, size=n)
    keep = rng.uniform(n) < p_keep(eps)
    # c * m * Phi[s, v] = c * sqrt(m) * sign
    alpha = c_eps(eps) * math.sqrt(matrix.rows) * matrix.signs(s, v - 1)
    return s, np.where(keep, alpha, -alpha)


# Estimation --------------------------------------------------------------------


def accumulate_cells(s: np.ndarray, alpha: np.ndarray, rows: int) -> np.ndarray:
    """Sum of the sparse report vectors, as a dense length-``rows`` vector."""
    return np.bincount(np.asarray(s, dtype=np.int64), weights=alpha, minlength=rows)


def estimate_from_zsum(zsum: np.ndarray, n: int, matrix: FrequencyMatrix) -> np.ndarray:
    """Inner products of each column with z-bar = zsum / n."""
    if n < 1:
        raise EmptyInput("no reports")
    if zsum.shape[0] != matrix.rows:
        raise LengthMismatch(f"accumulator has {zsum.shape[0]} rows, matrix has {matrix.rows}")
    nz = np.flatnonzero(zsum)
    if nz.size == 0:
        return np.zeros(matrix.k)
    block = matrix.entries(nz[:, None], np.arange(matrix.k)[None, :])
    return zsum[nz] @ block / n


def estimate_frequencies(reports: Sequence[CategoricalReport], matrix: FrequencyMatrix, n: int | None = None) -> np.ndarray:
    if not reports:
        raise EmptyInput("no reports")
    n = len(reports) if n is None else n
    s = np.array([r.s - 1 for r in reports])
    if s.min() < 0 or s.max() >= matrix.rows:
        raise DomainViolation("s", int(s.max() + 1), f"is outside 1..{matrix.rows}")
    alpha = np.array([r.alpha for r in reports], dtype=float)
    return estimate_from_zsum(accumulate_cells(s, alpha, matrix.rows), n, matrix)


def estimate_frequencies_batch(s: np.ndarray, alpha: np.ndarray, matrix: FrequencyMatrix, n: int | None = None) -> np.ndarray:
    n = len(s) if n is None else n
    return estimate_from_zsum(accumulate_cells(s, alpha, matrix.rows), n, matrix)


def clip_and_renormalize(freqs: np.ndarray) -> np.ndarray:
    """Optional post-processing: clamp to [0, 1] and rescale to sum 1."""
    clipped = np.clip(freqs, 0.0, 1.0)
    total = clipped.sum()
    if total <= 0:
        return np.full_like(clipped, 1.0 / clipped.size)
    return clipped / total
