"""Schemas, user tuples, privacy budgets, randomness and the report wire model.

Every randomized operation in the package takes a :class:`RandomSource`
explicitly; nothing draws from global state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np


class LDPError(Exception):
    """Base class for all errors raised by ldpkit."""


class DomainViolation(LDPError, ValueError):
    def __init__(self, attribute, value, reason: str = "out of domain"):
        self.attribute = attribute
        self.value = value
        super().__init__(f"attribute {attribute!r}: value {value!r} {reason}")


class KindMismatch(LDPError, TypeError):
    pass


class Overflow(LDPError, OverflowError):
    pass


class DegenerateParams(LDPError, ValueError):
    pass


class EmptyInput(LDPError, ValueError):
    pass


class LengthMismatch(LDPError, ValueError):
    pass


class MissingMatrix(LDPError, KeyError):
    pass


class InsufficientData(LDPError, ValueError):
    pass


class TooLarge(LDPError, ValueError):
    pass


class ParseError(LDPError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SpecError(LDPError, ValueError):
    pass


NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    k: int | None = None
    raw_min: float | None = None
    raw_max: float | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name or not self.name.replace("_", "a").replace("-", "a").replace(".", "a").isalnum():
            raise SpecError(f"invalid attribute name {self.name!r}")
        if self.kind == CATEGORICAL:
            if self.k is None or int(self.k) != self.k or self.k < 2:
                raise SpecError(f"categorical attribute {self.name!r} needs integer k >= 2")
            if self.labels is not None and len(self.labels) != self.k:
                raise SpecError(f"attribute {self.name!r}: {len(self.labels)} labels for k={self.k}")
        elif self.kind == NUMERIC:
            lo = -1.0 if self.raw_min is None else self.raw_min
            hi = 1.0 if self.raw_max is None else self.raw_max
            if not lo < hi:
                raise SpecError(f"numeric attribute {self.name!r} needs raw_min < raw_max")
            object.__setattr__(self, "raw_min", float(lo))
            object.__setattr__(self, "raw_max", float(hi))
        else:
            raise SpecError(f"unknown attribute kind {self.kind!r}")

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def label_index(self, label: str) -> int:
        """Map a raw categorical label to its 1-based index."""
        if self.labels is not None:
            try:
                return self.labels.index(label) + 1
            except ValueError:
                raise DomainViolation(self.name, label, "is not a known label") from None
        try:
            value = int(label)
        except ValueError:
            raise DomainViolation(self.name, label, "is not an integer in [k]") from None
        if not 1 <= value <= self.k:
            raise DomainViolation(self.name, label, f"is not in 1..{self.k}")
        return value


@dataclass(frozen=True)
class Schema:
    attributes: tuple[AttributeSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SpecError("duplicate attribute names in schema")

    def __len__(self) -> int:
        return len(self.attributes)

    def __iter__(self):
        return iter(self.attributes)

    def __getitem__(self, i) -> AttributeSpec:
        return self.attributes[i]

    @property
    def d(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def numeric_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.attributes) if a.is_numeric]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.attributes) if a.is_categorical]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def without(self, name: str) -> "Schema":
        return Schema(tuple(a for a in self.attributes if a.name != name))

    @classmethod
    def numeric(cls, d: int) -> "Schema":
        return cls(tuple(AttributeSpec(f"x{i + 1}", NUMERIC) for i in range(d)))

    @classmethod
    def parse(cls, text: str) -> "Schema":
        """Parse the plain-text schema format.

        One attribute per line: ``name,numeric,raw_min,raw_max`` or
        ``name,categorical,k`` with an optional fourth field listing the
        k labels separated by ``|``. Blank lines and ``#`` comments are
        ignored.
        """
        attrs = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                if len(parts) >= 2 and parts[1] == NUMERIC and len(parts) == 4:
                    attrs.append(AttributeSpec(parts[0], NUMERIC, raw_min=float(parts[2]), raw_max=float(parts[3])))
                elif len(parts) >= 2 and parts[1] == NUMERIC and len(parts) == 2:
                    attrs.append(AttributeSpec(parts[0], NUMERIC))
                elif len(parts) in (3, 4) and parts[1] == CATEGORICAL:
                    labels = tuple(parts[3].split("|")) if len(parts) == 4 else None
                    attrs.append(AttributeSpec(parts[0], CATEGORICAL, k=int(parts[2]), labels=labels))
                else:
                    raise ParseError(f"cannot parse schema line {raw!r}", row=lineno)
            except (ValueError, SpecError) as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(str(exc), row=lineno) from exc
        if not attrs:
            raise EmptyInput("schema declares no attributes")
        return cls(tuple(attrs))

    def dumps(self) -> str:
        lines = []
        for a in self.attributes:
            if a.is_numeric:
                lines.append(f"{a.name},numeric,{a.raw_min!r},{a.raw_max!r}")
            elif a.labels is not None:
                lines.append(f"{a.name},categorical,{a.k},{'|'.join(a.labels)}")
            else:
                lines.append(f"{a.name},categorical,{a.k}")
        return "\n".join(lines) + "\n"


UserTuple = tuple


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not (eps > 0 and math.isfinite(eps)):
            raise DegenerateParams(f"epsilon must be a positive finite real, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

    def split(self, parts: int) -> "PrivacyBudget":
        return PrivacyBudget(self.epsilon / parts)


def as_epsilon(epsilon: Union[float, PrivacyBudget]) -> float:
    if isinstance(epsilon, PrivacyBudget):
        return epsilon.epsilon
    return PrivacyBudget(epsilon).epsilon


def c_eps(epsilon: float) -> float:
    """Scaling factor (e^eps + 1) / (e^eps - 1) of the unbiased binary response."""
    if epsilon > 700.0:
        return 1.0 + 2.0 * math.exp(-epsilon)
    return (math.exp(epsilon) + 1.0) / math.expm1(epsilon)


def p_keep(epsilon: float) -> float:
    """Probability e^eps / (e^eps + 1) of keeping the true sign."""
    return 1.0 / (1.0 + math.exp(-epsilon))


class RandomSource:
    """Seeded random stream.

    Identical seeds give identical draw sequences. ``position`` counts the
    number of scalar values drawn so far. ``spawn`` derives independent
    child streams deterministically from the seed and a key.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.position = 0

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, position={self.position})"

    def spawn(self, *keys: int) -> "RandomSource":
        child = np.random.SeedSequence([self.seed, *[int(k) & 0xFFFFFFFF for k in keys]])
        return RandomSource(int(child.generate_state(1, dtype=np.uint64)[0]))

    def _count(self, size) -> None:
        self.position += 1 if size is None else int(np.prod(size))

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        self._count(size)
        return self._gen.random(size)

    def integers(self, high: int, size=None):
        """Uniform integers on [0, high)."""
        self._count(size)
        return self._gen.integers(0, high, size=size)

    def bernoulli(self, p, size=None):
        if size is None and np.ndim(p):
            size = np.shape(p)
        return self.uniform(size) < p

    def normal(self, size=None):
        self._count(size)
        return self._gen.standard_normal(size)

    def permutation(self, n: int):
        self._count(n)
        return self._gen.permutation(n)

    def beta(self, a, b, size=None):
        self._count(size)
        return self._gen.beta(a, b, size)

    def choice(self, n: int, p, size=None):
        """Categorical draws over 0..n-1 by inverse CDF."""
        cdf = np.cumsum(np.asarray(p, dtype=float))
        cdf /= cdf[-1]
        u = self.uniform(size)
        return np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)


def coerce_rng(rng: Union[RandomSource, int]) -> RandomSource:
    return rng if isinstance(rng, RandomSource) else RandomSource(rng)


def validate_tuple(schema: Schema, values: Sequence) -> UserTuple:
    """Return ``values`` unchanged if every entry lies in its attribute's domain."""
    if len(values) != len(schema):
        raise LengthMismatch(f"tuple has {len(values)} entries, schema has {len(schema)}")
    for attr, v in zip(schema, values):
        if attr.is_numeric:
            if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
                raise DomainViolation(attr.name, v, "is not a real number")
            if not (-1.0 <= float(v) <= 1.0):
                raise DomainViolation(attr.name, v, "is outside [-1, 1]")
        else:
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) and not (
                isinstance(v, (float, np.floating)) and float(v).is_integer()
            ):
                raise DomainViolation(attr.name, v, "is not an integer category")
            if not (1 <= int(v) <= attr.k):
                raise DomainViolation(attr.name, v, f"is not in 1..{attr.k}")
    return values


def validate_population(schema: Schema, data: np.ndarray) -> np.ndarray:
    """Vectorized :func:`validate_tuple` over an ``(n, d)`` array."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(schema):
        raise LengthMismatch(f"expected shape (n, {len(schema)}), got {data.shape}")
    for j, attr in enumerate(schema):
        col = data[:, j]
        if attr.is_numeric:
            bad = ~((col >= -1.0) & (col <= 1.0))
        else:
            bad = ~((col >= 1) & (col <= attr.k) & (col == np.round(col)))
        if bad.any():
            raise DomainViolation(attr.name, col[np.argmax(bad)])
    return data


def normalize_numeric(value: float, raw_min: float, raw_max: float) -> float:
    """Affine map of [raw_min, raw_max] onto [-1, 1]."""
    if not raw_min < raw_max:
        raise SpecError("raw_min must be < raw_max")
    if not (raw_min <= value <= raw_max):
        raise DomainViolation("value", value, f"is outside [{raw_min}, {raw_max}]")
    return 2.0 * (value - raw_min) / (raw_max - raw_min) - 1.0


# Report wire model ----------------------------------------------------------


@dataclass(frozen=True)
class NumericBit:
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise DomainViolation("sign", self.sign, "must be +1 or -1")


@dataclass(frozen=True)
class CategoricalCell:
    s: int
    alpha: float


@dataclass(frozen=True)
class DenseVector:
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


Payload = Union[NumericBit, CategoricalCell, DenseVector]


@dataclass(frozen=True)
class Report:
    user_id: str
    attr_index: int
    payload: Payload
    scale: int = 1
    epsilon: float | None = field(default=None, compare=False)


def as_array(values: Iterable[float]) -> np.ndarray:
    return np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
