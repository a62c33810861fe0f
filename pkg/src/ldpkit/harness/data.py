"""Dataset ingestion and preprocessing."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import (
    NUMERIC,
    AttributeSpec,
    DomainViolation,
    EmptyInput,
    ParseError,
    RandomSource,
    Schema,
    normalize_numeric,
)


@dataclass
class Dataset:
    """Users as rows of an ``(n, d)`` float array aligned with ``schema``.

    Numeric columns hold values in [-1, 1]; categorical columns hold the
    1-based category index.
    """

    schema: Schema
    data: np.ndarray

    def __len__(self) -> int:
        return self.data.shape[0]

    def tuples(self) -> list[tuple]:
        out = []
        cat = set(self.schema.categorical_indices)
        for row in self.data:
            out.append(tuple(int(v) if j in cat else float(v) for j, v in enumerate(row)))
        return out

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.schema.index(name)]

    def drop(self, name: str) -> "Dataset":
        j = self.schema.index(name)
        return Dataset(self.schema.without(name), np.delete(self.data, j, axis=1))

    def subset(self, rows) -> "Dataset":
        return Dataset(self.schema, self.data[rows])


def read_schema(path) -> Schema:
    return Schema.parse(Path(path).read_text())


def parse_dataset(text: str, schema: Schema) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInput("dataset file is empty") from None
    header = [h.strip() for h in header]
    missing = [name for name in schema.names if name not in header]
    if missing:
        raise ParseError(f"header lacks schema attributes {missing}", row=1)
    positions = [header.index(name) for name in schema.names]
    rows = []
    for lineno, record in enumerate(reader, start=2):
        if not record or all(not f.strip() for f in record):
            continue
        if len(record) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(record)}", row=lineno)
        values = []
        for attr, pos in zip(schema, positions):
            field = record[pos].strip()
            if attr.is_numeric:
                try:
                    raw = float(field)
                except ValueError:
                    raise ParseError(f"not a number: {field!r}", row=lineno, column=attr.name) from None
                if not math.isfinite(raw):
                    raise ParseError(f"not a finite number: {field!r}", row=lineno, column=attr.name)
                try:
                    values.append(normalize_numeric(raw, attr.raw_min, attr.raw_max))
                except DomainViolation:
                    raise DomainViolation(attr.name, raw, f"is outside [{attr.raw_min}, {attr.raw_max}] (row {lineno})") from None
            else:
                try:
                    values.append(attr.label_index(field))
                except DomainViolation as exc:
                    raise ParseError(str(exc), row=lineno, column=attr.name) from None
        rows.append(values)
    if not rows:
        raise EmptyInput("dataset has no data rows")
    return Dataset(schema, np.asarray(rows, dtype=float))


def load_dataset(csv_path, schema_path) -> Dataset:
    """Read a CSV whose header names the schema's attributes."""
    schema = schema_path if isinstance(schema_path, Schema) else read_schema(schema_path)
    return parse_dataset(Path(csv_path).read_text(), schema)


def onehot_transform(dataset: Dataset) -> Dataset:
    """Expand each categorical attribute with k values into k-1 ±1 columns.

    Value l < k sets column l to +1 and the rest to -1; value k sets all k-1
    columns to -1.
    """
    cols, attrs = [], []
    for j, attr in enumerate(dataset.schema):
        col = dataset.data[:, j]
        if attr.is_numeric:
            cols.append(col[:, None])
            attrs.append(attr)
        else:
            levels = np.arange(1, attr.k)
            cols.append(np.where(col[:, None] == levels[None, :], 1.0, -1.0))
            attrs.extend(AttributeSpec(f"{attr.name}_{l}", NUMERIC) for l in levels)
    data = np.hstack(cols) if cols else np.zeros((len(dataset), 0))
    return Dataset(Schema(tuple(attrs)), data)


def binarize_label(values, threshold: float | None = None) -> np.ndarray:
    """+1 where value >= threshold (default: the mean of ``values``), else -1."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyInput("no label values")
    if threshold is None:
        threshold = float(values.mean())
    return np.where(values >= threshold, 1.0, -1.0)


def kfold_indices(n: int, folds: int, rng: RandomSource) -> list[np.ndarray]:
    """Round-robin fold assignment after a seeded shuffle."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    perm = rng.permutation(n)
    return [np.sort(perm[f::folds]) for f in range(folds)]


def write_csv(dataset: Dataset, path, raw: bool = True) -> None:
    """Write ``dataset`` as CSV, mapping normalized numerics back to raw bounds."""
    schema = dataset.schema
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names)
        for row in dataset.data:
            out = []
            for attr, v in zip(schema, row):
                if attr.is_numeric:
                    val = (v + 1.0) / 2.0 * (attr.raw_max - attr.raw_min) + attr.raw_min if raw else v
                    out.append(repr(float(val)))
                elif attr.labels is not None:
                    out.append(attr.labels[int(v) - 1])
                else:
                    out.append(str(int(v)))
            w.writerow(out)
