"""Mixed numeric/categorical tuples.

``multi_perturb`` reports one uniformly chosen attribute per user at the
full budget: the one-bit rule for numeric attributes, a frequency-oracle
cell scaled by d for categorical ones. ``hybrid_perturb`` is the
budget-splitting baseline: Duchi (fixed) on the numeric block with budget
d_n*eps/d, then one frequency-oracle report per categorical attribute with
budget eps/d each.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    CategoricalCell,
    DenseVector,
    EmptyInput,
    MissingMatrix,
    NumericBit,
    RandomSource,
    Report,
    Schema,
    as_epsilon,
    c_eps,
    validate_population,
    validate_tuple,
)
from .mech_categorical import (
    AUTO,
    DEFAULT_BETA,
    FrequencyMatrix,
    accumulate_cells,
    bs_perturb_batch,
    build_matrix,
    estimate_from_zsum,
)
from .mech_numeric import FIXED, duchi_perturb_batch, onebit_signs

Matrices = Mapping[int, FrequencyMatrix]


def build_matrices(
    schema: Schema,
    n: int,
    epsilon,
    *,
    kind: str = AUTO,
    beta: float = DEFAULT_BETA,
    seed: int = 0,
) -> dict[int, FrequencyMatrix]:
    """One frequency matrix per categorical attribute, keyed by 0-based index."""
    eps = as_epsilon(epsilon)
    return {
        j: build_matrix(schema[j].k, n, eps, kind=kind, beta=beta, seed=seed * 1_000_003 + j)
        for j in schema.categorical_indices
    }


def _require_matrices(schema: Schema, matrices: Matrices) -> None:
    for j in schema.categorical_indices:
        if j not in matrices:
            raise MissingMatrix(f"no frequency matrix for categorical attribute {schema[j].name!r}")
        if matrices[j].k != schema[j].k:
            raise MissingMatrix(f"matrix for {schema[j].name!r} has k={matrices[j].k}, expected {schema[j].k}")


@dataclass(frozen=True)
class MultiReport:
    attr_index: int  # 1-based
    payload: NumericBit | CategoricalCell
    scale: int
    epsilon: float


@dataclass
class MultiBatch:
    """Column-wise multi-attribute reports for n users.

    ``attr_index`` is 0-based; ``sign`` is 0 for categorical rows and ``s`` is
    -1 for numeric rows. ``alpha`` is the unscaled cell value; estimation
    multiplies it by d.
    """

    attr_index: np.ndarray
    sign: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    d: int
    epsilon: float

    def __len__(self) -> int:
        return len(self.attr_index)

    def reports(self, user_ids: Sequence[str] | None = None) -> list[MultiReport]:
        out = []
        for i in range(len(self)):
            j = int(self.attr_index[i])
            if self.s[i] < 0:
                payload = NumericBit(int(self.sign[i]))
            else:
                payload = CategoricalCell(int(self.s[i]) + 1, float(self.alpha[i]))
            out.append(MultiReport(j + 1, payload, self.d, self.epsilon))
        return out

    @classmethod
    def from_reports(cls, reports: Sequence[MultiReport]) -> "MultiBatch":
        if not reports:
            raise EmptyInput("no reports")
        d, eps = reports[0].scale, reports[0].epsilon
        j = np.array([r.attr_index - 1 for r in reports], dtype=np.int64)
        sign = np.array([r.payload.sign if isinstance(r.payload, NumericBit) else 0 for r in reports], dtype=np.int64)
        s = np.array([r.payload.s - 1 if isinstance(r.payload, CategoricalCell) else -1 for r in reports], dtype=np.int64)
        alpha = np.array([r.payload.alpha if isinstance(r.payload, CategoricalCell) else 0.0 for r in reports])
        return cls(j, sign, s, alpha, d, eps)


def multi_perturb_batch(data: np.ndarray, schema: Schema, epsilon, matrices: Matrices, rng: RandomSource) -> MultiBatch:
    eps = as_epsilon(epsilon)
    data = validate_population(schema, data)
    _require_matrices(schema, matrices)
    n, d = data.shape
    j = rng.integers(d, size=n)
    chosen = data[np.arange(n), j]
    sign = np.zeros(n, dtype=np.int64)
    s = np.full(n, -1, dtype=np.int64)
    alpha = np.zeros(n)
    for a, attr in enumerate(schema):
        rows = np.flatnonzero(j == a)
        if rows.size == 0:
            continue
        if attr.is_numeric:
            sign[rows] = onebit_signs(chosen[rows], eps, rng)
        else:
            s_a, alpha_a = bs_perturb_batch(chosen[rows], matrices[a], eps, rng)
            s[rows] = s_a
            alpha[rows] = alpha_a
    return MultiBatch(j, sign, s, alpha, d, eps)


def multi_perturb(values, schema: Schema, epsilon, matrices: Matrices, rng: RandomSource) -> MultiReport:
    validate_tuple(schema, values)
    return multi_perturb_batch(np.asarray([values], dtype=float), schema, epsilon, matrices, rng).reports()[0]


@dataclass
class MultiEstimate:
    means: dict[int, float]
    frequencies: dict[int, np.ndarray]


def estimate_multi_batch(batch: MultiBatch, schema: Schema, matrices: Matrices, n: int | None = None) -> MultiEstimate:
    n = len(batch) if n is None else n
    if n < 1 or len(batch) == 0:
        raise EmptyInput("no reports")
    _require_matrices(schema, matrices)
    d = batch.d
    scale = d * c_eps(batch.epsilon)
    means, freqs = {}, {}
    for a, attr in enumerate(schema):
        rows = batch.attr_index == a
        if attr.is_numeric:
            means[a] = float(batch.sign[rows].sum() * scale / n)
        else:
            zsum = accumulate_cells(batch.s[rows], d * batch.alpha[rows], matrices[a].rows)
            freqs[a] = estimate_from_zsum(zsum, n, matrices[a])
    return MultiEstimate(means, freqs)


def estimate_from_multi(reports: Sequence[MultiReport], schema: Schema, matrices: Matrices) -> MultiEstimate:
    return estimate_multi_batch(MultiBatch.from_reports(reports), schema, matrices)


# Hybrid baseline -------------------------------------------------------------


def hybrid_budgets(schema: Schema, epsilon) -> tuple[float, float]:
    """(numeric block budget d_n*eps/d, per-categorical budget eps/d)."""
    eps = as_epsilon(epsilon)
    d = len(schema)
    return len(schema.numeric_indices) * eps / d, eps / d


@dataclass
class HybridBatch:
    numeric: np.ndarray  # (n, d_n) entries in {-B, B}
    numeric_epsilon: float
    cells: dict[int, tuple[np.ndarray, np.ndarray]]  # attr -> (s, alpha), s 0-based
    categorical_epsilon: float

    def __len__(self) -> int:
        if self.numeric.shape[1]:
            return self.numeric.shape[0]
        return len(next(iter(self.cells.values()))[0])


def hybrid_perturb_batch(data: np.ndarray, schema: Schema, epsilon, matrices: Matrices, rng: RandomSource) -> HybridBatch:
    data = validate_population(schema, data)
    _require_matrices(schema, matrices)
    eps_num, eps_cat = hybrid_budgets(schema, epsilon)
    num_idx = schema.numeric_indices
    if num_idx:
        numeric = duchi_perturb_batch(data[:, num_idx], eps_num, FIXED, rng)
    else:
        numeric = np.zeros((data.shape[0], 0))
    cells = {a: bs_perturb_batch(data[:, a], matrices[a], eps_cat, rng) for a in schema.categorical_indices}
    return HybridBatch(numeric, eps_num, cells, eps_cat)


def hybrid_perturb(values, schema: Schema, epsilon, matrices: Matrices, rng: RandomSource, user_id: str = "0") -> list[Report]:
    validate_tuple(schema, values)
    batch = hybrid_perturb_batch(np.asarray([values], dtype=float), schema, epsilon, matrices, rng)
    out = []
    if batch.numeric.shape[1]:
        out.append(Report(user_id, 0, DenseVector(batch.numeric[0]), epsilon=batch.numeric_epsilon))
    for a, (s, alpha) in batch.cells.items():
        out.append(Report(user_id, a + 1, CategoricalCell(int(s[0]) + 1, float(alpha[0])), epsilon=batch.categorical_epsilon))
    return out


def estimate_hybrid_batch(batch: HybridBatch, schema: Schema, matrices: Matrices) -> MultiEstimate:
    n = len(batch)
    if n < 1:
        raise EmptyInput("no reports")
    col_means = batch.numeric.mean(axis=0) if batch.numeric.shape[1] else []
    means = {a: float(col_means[i]) for i, a in enumerate(schema.numeric_indices)}
    freqs = {}
    for a, (s, alpha) in batch.cells.items():
        freqs[a] = estimate_from_zsum(accumulate_cells(s, alpha, matrices[a].rows), n, matrices[a])
    return MultiEstimate(means, freqs)


def true_statistics(data: np.ndarray, schema: Schema) -> MultiEstimate:
    """Exact population means and frequencies, the targets of estimation."""
    data = np.asarray(data, dtype=float)
    means = {a: float(data[:, a].mean()) for a in schema.numeric_indices}
    freqs = {
        a: np.bincount(data[:, a].astype(np.int64) - 1, minlength=schema[a].k) / data.shape[0]
        for a in schema.categorical_indices
    }
    return MultiEstimate(means, freqs)


def linf_errors(estimate: MultiEstimate, truth: MultiEstimate) -> tuple[float, float]:
    """(max numeric-mean error, max frequency error) over all attributes."""
    mean_err = max((abs(estimate.means[a] - truth.means[a]) for a in truth.means), default=math.nan)
    freq_err = max((float(np.max(np.abs(estimate.frequencies[a] - truth.frequencies[a]))) for a in truth.frequencies), default=math.nan)
    return mean_err, freq_err
