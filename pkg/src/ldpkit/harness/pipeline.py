"""Dataset -> reports -> estimates, for the two mean/frequency protocols."""
from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from ..core import CategoricalCell, DenseVector, EmptyInput, NumericBit, ParseError, RandomSource, Report, Schema
from ..mech_categorical import AUTO, DEFAULT_BETA
from ..mech_multi import (
    HybridBatch,
    MultiBatch,
    MultiEstimate,
    build_matrices,
    estimate_hybrid_batch,
    estimate_multi_batch,
    hybrid_budgets,
    hybrid_perturb_batch,
    multi_perturb_batch,
)
from ..wire import ReportHeader

MULTI = "multi"
HYBRID = "hybrid"
METHOD_ALIASES = {"ours": MULTI, "multi": MULTI, "harmony": MULTI, "hybrid": HYBRID}


def canonical_method(name: str) -> str:
    try:
        return METHOD_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; expected one of {sorted(METHOD_ALIASES)}") from None


def make_matrices(method: str, schema: Schema, n: int, epsilon: float, kind: str, beta: float, seed: int):
    """Frequency matrices sized for the budget each categorical report gets."""
    eps = epsilon if method == MULTI else hybrid_budgets(schema, epsilon)[1]
    return build_matrices(schema, max(n, 1), eps, kind=kind, beta=beta, seed=seed)


def run_protocol(data: np.ndarray, schema: Schema, method: str, epsilon: float, rng: RandomSource,
                 kind: str = AUTO, beta: float = DEFAULT_BETA):
    """Perturb every row of ``data`` and return ``(batch, matrices)``."""
    method = canonical_method(method)
    matrices = make_matrices(method, schema, data.shape[0], epsilon, kind, beta, rng.spawn(0xA7).seed)
    if method == MULTI:
        return multi_perturb_batch(data, schema, epsilon, matrices, rng), matrices
    return hybrid_perturb_batch(data, schema, epsilon, matrices, rng), matrices


def estimate_protocol(batch, schema: Schema, matrices) -> MultiEstimate:
    if isinstance(batch, MultiBatch):
        return estimate_multi_batch(batch, schema, matrices)
    return estimate_hybrid_batch(batch, schema, matrices)


# Report-file conversion -------------------------------------------------------


def batch_to_reports(batch, user_ids: Sequence[str]) -> list[Report]:
    out = []
    if isinstance(batch, MultiBatch):
        for i, uid in enumerate(user_ids):
            j = int(batch.attr_index[i]) + 1
            if batch.s[i] < 0:
                payload = NumericBit(int(batch.sign[i]))
            else:
                payload = CategoricalCell(int(batch.s[i]) + 1, float(batch.alpha[i]))
            out.append(Report(uid, j, payload, batch.d, batch.epsilon))
        return out
    for i, uid in enumerate(user_ids):
        if batch.numeric.shape[1]:
            out.append(Report(uid, 0, DenseVector(batch.numeric[i]), 1, batch.numeric_epsilon))
        for a in sorted(batch.cells):
            s, alpha = batch.cells[a]
            out.append(Report(uid, a + 1, CategoricalCell(int(s[i]) + 1, float(alpha[i])), 1, batch.categorical_epsilon))
    return out


def reports_to_batch(header: ReportHeader, reports: Sequence[Report]):
    if not reports:
        raise EmptyInput("no reports")
    schema = header.schema
    method = canonical_method(header.method)
    if method == MULTI:
        d = len(schema)
        j = np.empty(len(reports), dtype=np.int64)
        sign = np.zeros(len(reports), dtype=np.int64)
        s = np.full(len(reports), -1, dtype=np.int64)
        alpha = np.zeros(len(reports))
        for i, r in enumerate(reports):
            if not 1 <= r.attr_index <= d:
                raise ParseError(f"attr_index {r.attr_index} outside 1..{d}", row=i + 1)
            if r.scale != d:
                raise ParseError(f"scale {r.scale} does not match d={d}", row=i + 1)
            j[i] = r.attr_index - 1
            is_num = schema[r.attr_index - 1].is_numeric
            if isinstance(r.payload, NumericBit) and is_num:
                sign[i] = r.payload.sign
            elif isinstance(r.payload, CategoricalCell) and not is_num:
                s[i] = r.payload.s - 1
                alpha[i] = r.payload.alpha
            else:
                raise ParseError(f"payload kind does not match attribute {schema[r.attr_index - 1].name!r}", row=i + 1)
        return MultiBatch(j, sign, s, alpha, d, header.epsilon)

    eps_num, eps_cat = hybrid_budgets(schema, header.epsilon)
    dense = []
    cells = defaultdict(lambda: ([], []))
    for r in reports:
        if isinstance(r.payload, DenseVector):
            dense.append(r.payload.values)
        else:
            cells[r.attr_index - 1][0].append(r.payload.s - 1)
            cells[r.attr_index - 1][1].append(r.payload.alpha)
    dn = len(schema.numeric_indices)
    numeric = np.asarray(dense, dtype=float).reshape(-1, dn) if dn else np.zeros((0, 0))
    cell_arrays = {a: (np.asarray(s, dtype=np.int64), np.asarray(al, dtype=float)) for a, (s, al) in cells.items()}
    n = header.n
    if dn and n is None:
        n = numeric.shape[0]
    batch = HybridBatch(numeric if dn else np.zeros((n or 0, 0)), eps_num, cell_arrays, eps_cat)
    return batch


def _labels(attr) -> list[str]:
    return list(attr.labels) if attr.labels is not None else [str(v) for v in range(1, attr.k + 1)]


def estimates_as_dict(est: MultiEstimate, schema: Schema) -> dict:
    """JSON-ready estimates: means by attribute name, frequencies by category label."""
    return {
        "means": {schema[a].name: float(v) for a, v in sorted(est.means.items())},
        "frequencies": {
            schema[a].name: dict(zip(_labels(schema[a]), (float(x) for x in f)))
            for a, f in sorted(est.frequencies.items())
        },
    }
