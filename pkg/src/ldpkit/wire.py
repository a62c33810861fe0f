"""Plain-text report files.

A report file starts with ``#`` metadata lines (format tag, method, budget,
seed, the schema and every frequency matrix needed for decoding), followed
by one comma-separated row per report::

    user_id,attr_index,N,sign[,scale]           numeric one-bit report
    user_id,attr_index,C,s,alpha[,scale]        frequency-oracle cell
    user_id,0,D,v_1,...,v_dn                    dense numeric block

``attr_index`` and ``s`` are 1-based, ``sign`` is ``+1`` or ``-1`` and
``alpha`` is printed with round-trip precision. ``scale`` is the public
multiplier d applied by the aggregator to multi-attribute reports.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .core import (
    CategoricalCell,
    DenseVector,
    EmptyInput,
    NumericBit,
    ParseError,
    Report,
    Schema,
)
from .mech_categorical import FrequencyMatrix

FORMAT_TAG = "ldpkit-reports/1"
NUMERIC_TAG = "N"
CATEGORICAL_TAG = "C"
DENSE_TAG = "D"


def format_sign(sign: int) -> str:
    return "+1" if sign > 0 else "-1"


def format_report(report: Report) -> str:
    p = report.payload
    head = f"{report.user_id},{report.attr_index}"
    tail = f",{report.scale}" if report.scale != 1 else ""
    if isinstance(p, NumericBit):
        return f"{head},{NUMERIC_TAG},{format_sign(p.sign)}{tail}"
    if isinstance(p, CategoricalCell):
        return f"{head},{CATEGORICAL_TAG},{p.s},{float(p.alpha)!r}{tail}"
    if isinstance(p, DenseVector):
        return f"{head},{DENSE_TAG}," + ",".join(repr(v) for v in p.values)
    raise TypeError(f"unknown payload {type(p).__name__}")


def _int(field_: str, lineno: int | None, column: str) -> int:
    try:
        return int(field_)
    except ValueError:
        raise ParseError(f"expected an integer, found {field_!r}", row=lineno, column=column) from None


def _float(field_: str, lineno: int | None, column: str) -> float:
    try:
        return float(field_)
    except ValueError:
        raise ParseError(f"expected a number, found {field_!r}", row=lineno, column=column) from None


def parse_report(line: str, lineno: int | None = None, epsilon: float | None = None) -> Report:
    fields = [f.strip() for f in line.strip().split(",")]
    if len(fields) < 4:
        raise ParseError("too few fields", row=lineno)
    uid, attr, tag = fields[0], _int(fields[1], lineno, "attr_index"), fields[2]
    rest = fields[3:]
    if tag == NUMERIC_TAG:
        if rest[0] not in ("+1", "-1") or len(rest) > 2:
            raise ParseError(f"bad numeric report {line.strip()!r}", row=lineno, column="sign")
        scale = _int(rest[1], lineno, "scale") if len(rest) == 2 else 1
        return Report(uid, attr, NumericBit(int(rest[0])), scale, epsilon)
    if tag == CATEGORICAL_TAG:
        if len(rest) not in (2, 3):
            raise ParseError(f"bad categorical report {line.strip()!r}", row=lineno)
        s = _int(rest[0], lineno, "s")
        alpha = _float(rest[1], lineno, "alpha")
        scale = _int(rest[2], lineno, "scale") if len(rest) == 3 else 1
        return Report(uid, attr, CategoricalCell(s, alpha), scale, epsilon)
    if tag == DENSE_TAG:
        return Report(uid, attr, DenseVector([_float(v, lineno, "value") for v in rest]), 1, epsilon)
    raise ParseError(f"unknown report tag {tag!r}", row=lineno, column="tag")


def format_matrix(m: FrequencyMatrix) -> str:
    seed = "" if m.seed is None else str(m.seed)
    return f"{m.kind}:{m.k}:{m.rows}:{seed}"


def parse_matrix(text: str) -> FrequencyMatrix:
    try:
        kind, k, rows, seed = text.split(":")
        return FrequencyMatrix(kind, int(rows), int(k), int(seed) if seed else None)
    except ValueError as exc:
        raise ParseError(f"bad matrix spec {text!r}: {exc}") from None


@dataclass
class ReportHeader:
    method: str
    epsilon: float
    schema: Schema
    seed: int | None = None
    matrices: dict[int, FrequencyMatrix] = field(default_factory=dict)  # 0-based attribute -> matrix
    n: int | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"# {FORMAT_TAG}", f"# method={self.method}", f"# epsilon={float(self.epsilon)!r}"]
        if self.seed is not None:
            out.append(f"# seed={self.seed}")
        if self.n is not None:
            out.append(f"# n={self.n}")
        for key, value in sorted(self.extra.items()):
            out.append(f"# {key}={value}")
        for j in sorted(self.matrices):
            out.append(f"# matrix.{j + 1}={format_matrix(self.matrices[j])}")
        out.extend(f"# schema: {line}" for line in self.schema.dumps().splitlines())
        return out

    @classmethod
    def parse(cls, lines: list[str]) -> "ReportHeader":
        meta, schema_lines = {}, []
        if not lines or lines[0].strip() != f"# {FORMAT_TAG}":
            raise ParseError(f"missing '# {FORMAT_TAG}' preamble", row=1)
        for line in lines[1:]:
            body = line[1:].strip()
            if body.startswith("schema:"):
                schema_lines.append(body[len("schema:"):].strip())
            else:
                key, sep, value = body.partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
        for key in ("method", "epsilon"):
            if key not in meta:
                raise ParseError(f"preamble lacks {key!r}")
        schema = Schema.parse("\n".join(schema_lines))
        matrices = {int(k.split(".", 1)[1]) - 1: parse_matrix(v) for k, v in meta.items() if k.startswith("matrix.")}
        known = {"method", "epsilon", "seed", "n"}
        extra = {k: v for k, v in meta.items() if k not in known and not k.startswith("matrix.")}
        return cls(
            method=meta["method"],
            epsilon=float(meta["epsilon"]),
            schema=schema,
            seed=int(meta["seed"]) if "seed" in meta else None,
            matrices=matrices,
            n=int(meta["n"]) if "n" in meta else None,
            extra=extra,
        )


def write_reports(path, header: ReportHeader, reports: Iterable[Report]) -> None:
    with open(path, "w") as fh:
        for line in header.lines():
            fh.write(line + "\n")
        for r in reports:
            fh.write(format_report(r) + "\n")


def iter_lines(path) -> Iterator[tuple[int, str]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def read_reports(path) -> tuple[ReportHeader, list[Report]]:
    header_lines, body = [], []
    for lineno, line in iter_lines(Path(path)):
        if line.startswith("#") and not body:
            header_lines.append(line.rstrip("\n"))
        else:
            body.append((lineno, line))
    if not header_lines:
        raise EmptyInput("report file is empty")
    header = ReportHeader.parse(header_lines)
    reports = [parse_report(line, lineno, header.epsilon) for lineno, line in body]
    return header, reports
