"""Perturbation of numeric tuples in [-1, 1]^d.

Three mechanisms live here:

* the Laplace baseline (per-entry scale 2d/eps),
* Duchi et al.'s sign-vector mechanism, in its original form and with the
  corrected Bernoulli parameter that restores eps-LDP for even d,
* the one-bit mechanism: sample one attribute uniformly, report a single
  sign whose bias encodes the value.

Each mechanism has a scalar form working on a single tuple and a ``*_batch``
form working on an ``(n, d)`` array with one row per user.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .core import (
    DenseVector,
    DomainViolation,
    KindMismatch,
    Overflow,
    RandomSource,
    as_epsilon,
    c_eps,
)

MAX_DUCHI_D = 64

ORIGINAL = "original"
FIXED = "fixed"


def _numeric_array(values, name: str = "tuple") -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind not in "fiu" or arr.dtype == bool:
        raise KindMismatch(f"{name} must be numeric-only")
    arr = arr.astype(float)
    if not np.all((arr >= -1.0) & (arr <= 1.0)):
        bad = arr[~((arr >= -1.0) & (arr <= 1.0))].flat[0]
        raise DomainViolation(name, float(bad), "is outside [-1, 1]")
    return arr


def _check_schema_numeric(schema) -> None:
    if schema is not None and schema.categorical_indices:
        raise KindMismatch("mechanism accepts numeric attributes only")


# Laplace ----------------------------------------------------------------------


def laplace_noise(scale: float, rng: RandomSource, size) -> np.ndarray:
    """Laplace(0, scale) draws by inverse CDF of a uniform."""
    u = rng.uniform(size) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_perturb(values, epsilon, rng: RandomSource, schema=None) -> DenseVector:
    _check_schema_numeric(schema)
    t = _numeric_array(values)
    if t.ndim != 1:
        raise KindMismatch("expected a single tuple")
    return DenseVector(laplace_perturb_batch(t[None, :], epsilon, rng)[0])


def laplace_perturb_batch(data: np.ndarray, epsilon, rng: RandomSource) -> np.ndarray:
    eps = as_epsilon(epsilon)
    t = _numeric_array(data, "data")
    d = t.shape[1]
    return t + laplace_noise(2.0 * d / eps, rng, t.shape)


# Duchi et al. ----------------------------------------------------------------


@dataclass(frozen=True)
class DuchiConstants:
    d: int
    epsilon: float
    C_d: float
    B: float
    variant: str
    p_u: float
    # Exact integer tallies of sign vectors by agreement count with v.
    plus_weights: tuple[int, ...]
    minus_weights: tuple[int, ...]

    @property
    def plus_size(self) -> int:
        return sum(self.plus_weights)

    @property
    def minus_size(self) -> int:
        return sum(self.minus_weights)


@lru_cache(maxsize=512)
def _duchi_constants(d: int, epsilon: float, variant: str, max_d: int) -> DuchiConstants:
    if d < 1:
        raise DomainViolation("d", d, "must be >= 1")
    if d > max_d:
        raise Overflow(f"d={d} exceeds the supported maximum of {max_d}")
    if variant not in (ORIGINAL, FIXED):
        raise ValueError(f"unknown Duchi variant {variant!r}")
    # 2 * C_d stays integral, so keep it exact until the final division.
    if d % 2:
        twice_c = 2 ** d
        denom_binom = comb(d - 1, (d - 1) // 2)
    else:
        twice_c = 2 ** d - comb(d, d // 2)
        denom_binom = comb(d - 1, d // 2)
    # 1 / (e^eps - 1) and p_u written with e^-eps so huge budgets do not overflow
    inv_em1 = math.exp(-epsilon) / -math.expm1(-epsilon)
    C_d = twice_c / 2
    B = (2 ** d * inv_em1 + C_d) / denom_binom
    if variant == ORIGINAL:
        p_u = 1.0 / (1.0 + math.exp(-epsilon))
    else:
        p_u = C_d / (C_d - C_d * math.exp(-epsilon) + 2 ** d * math.exp(-epsilon))
    # t* . v = B (2a - d) for a agreements: T+ needs 2a > d, ties go to T-.
    plus = tuple(comb(d, a) if 2 * a > d else 0 for a in range(d + 1))
    minus = tuple(comb(d, a) if 2 * a <= d else 0 for a in range(d + 1))
    return DuchiConstants(d, epsilon, C_d, B, variant, p_u, plus, minus)


def duchi_constants(d: int, epsilon, variant: str = FIXED, max_d: int = MAX_DUCHI_D) -> DuchiConstants:
    return _duchi_constants(int(d), as_epsilon(epsilon), variant, int(max_d))


def _sample_agreements(weights: tuple[int, ...], rng: RandomSource, n: int) -> np.ndarray:
    total = sum(weights)
    # exact integer cumulative sums, converted once
    cdf = np.array([sum(weights[: a + 1]) / total for a in range(len(weights))])
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.uniform(n), side="right")


def duchi_perturb_batch(data: np.ndarray, epsilon, variant: str, rng: RandomSource) -> np.ndarray:
    """Duchi et al.'s mechanism over rows of ``data``; returns values in {-B, B}."""
    t = _numeric_array(data, "data")
    n, d = t.shape
    const = duchi_constants(d, epsilon, variant)
    v = np.where(rng.uniform((n, d)) < 0.5 + 0.5 * t, 1.0, -1.0)
    u = rng.uniform(n) < const.p_u
    a_plus = _sample_agreements(const.plus_weights, rng, n)
    a_minus = _sample_agreements(const.minus_weights, rng, n)
    agree = np.where(u, a_plus, a_minus)
    # uniform subset of size `agree` via ranks of iid keys
    ranks = np.argsort(np.argsort(rng.uniform((n, d)), axis=1), axis=1)
    signs = np.where(ranks < agree[:, None], v, -v)
    return const.B * signs


def duchi_perturb(values, epsilon, variant: str, rng: RandomSource, schema=None) -> DenseVector:
    _check_schema_numeric(schema)
    t = _numeric_array(values)
    if t.ndim != 1:
        raise KindMismatch("expected a single tuple")
    return DenseVector(duchi_perturb_batch(t[None, :], epsilon, variant, rng)[0])


# One-bit mechanism -------------------------------------------------------------


@dataclass(frozen=True)
class NumericReport:
    """A one-bit report: attribute index ``attr_index`` (1-based) and a sign."""

    attr_index: int
    sign: int
    epsilon: float
    d: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise DomainViolation("sign", self.sign, "must be +1 or -1")
        if not 1 <= self.attr_index <= self.d:
            raise DomainViolation("attr_index", self.attr_index, f"is not in 1..{self.d}")

    @property
    def magnitude(self) -> float:
        return self.d * c_eps(self.epsilon)


def onebit_plus_probability(value, epsilon: float):
    """Pr[sign = +1] for a value in [-1, 1]."""
    return 0.5 + 0.5 * np.asarray(value) * math.tanh(0.5 * epsilon)


def onebit_signs(values: np.ndarray, epsilon: float, rng: RandomSource) -> np.ndarray:
    """One sign per entry of ``values``, biased per the one-bit rule."""
    return np.where(rng.uniform(np.shape(values)) < onebit_plus_probability(values, epsilon), 1, -1)


def harmony_numeric_perturb(values, epsilon, rng: RandomSource, schema=None) -> NumericReport:
    _check_schema_numeric(schema)
    eps = as_epsilon(epsilon)
    t = _numeric_array(values)
    if t.ndim != 1:
        raise KindMismatch("expected a single tuple")
    d = t.shape[0]
    j = int(rng.integers(d))
    sign = int(onebit_signs(t[j], eps, rng))
    return NumericReport(j + 1, sign, eps, d)


def harmony_numeric_perturb_batch(data: np.ndarray, epsilon, rng: RandomSource):
    """Vectorized one-bit mechanism.

    Returns ``(attr_index, sign)`` integer arrays; ``attr_index`` is 0-based.
    """
    eps = as_epsilon(epsilon)
    t = _numeric_array(data, "data")
    n, d = t.shape
    j = rng.integers(d, size=n)
    signs = onebit_signs(t[np.arange(n), j], eps, rng)
    return j, signs


def decode_numeric_report(report: NumericReport) -> DenseVector:
    out = [0.0] * report.d
    out[report.attr_index - 1] = report.sign * report.magnitude
    return DenseVector(out)


def decode_numeric_batch(attr_index: np.ndarray, signs: np.ndarray, d: int, epsilon) -> np.ndarray:
    """Dense ``(n, d)`` decode of batched one-bit reports (0-based indices)."""
    n = len(attr_index)
    out = np.zeros((n, d))
    out[np.arange(n), attr_index] = signs * d * c_eps(as_epsilon(epsilon))
    return out


def onebit_mean_estimate(attr_index: np.ndarray, signs: np.ndarray, d: int, epsilon, n: int | None = None) -> np.ndarray:
    """Average decoded one-bit reports without materializing them."""
    n = len(attr_index) if n is None else n
    sums = np.bincount(attr_index, weights=signs, minlength=d)
    return sums * d * c_eps(as_epsilon(epsilon)) / n
