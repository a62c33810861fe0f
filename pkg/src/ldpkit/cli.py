"""Command-line entry point: ``ldpkit <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .audit import MECHANISMS, default_grid, make_mechanism, max_ldp_ratio
from .core import LDPError, RandomSource
from .erm import LOSSES, MGD, MGD_DR, MODES, TrainConfig, batch_size_rule, dumps_model, evaluate, mgd_train
from .harness.data import binarize_label, load_dataset, onehot_transform, read_schema
from .harness.experiment import load_config, read_metrics, run_experiment, summarize, write_metrics
from .harness.pipeline import (
    batch_to_reports,
    canonical_method,
    estimate_protocol,
    estimates_as_dict,
    reports_to_batch,
    run_protocol,
)
from .mech_categorical import AUTO, DEFAULT_BETA, ORTHOGONAL, RANDOM_PROJECTION
from .wire import ReportHeader, read_reports, write_reports


def _cmd_perturb(args) -> int:
    ds = load_dataset(args.data, args.schema)
    method = canonical_method(args.method)
    rng = RandomSource(args.seed)
    batch, matrices = run_protocol(ds.data, ds.schema, method, args.epsilon, rng, args.matrix, args.beta)
    header = ReportHeader(method, args.epsilon, ds.schema, args.seed, matrices, n=len(ds))
    user_ids = [str(i + 1) for i in range(len(ds))]
    write_reports(args.out, header, batch_to_reports(batch, user_ids))
    print(f"wrote {len(ds)} users' reports to {args.out}", file=sys.stderr)
    return 0


def _cmd_aggregate(args) -> int:
    header, reports = read_reports(args.reports)
    batch = reports_to_batch(header, reports)
    est = estimate_protocol(batch, header.schema, header.matrices)
    text = json.dumps(estimates_as_dict(est, header.schema), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _xy(ds, label: str, loss: str, threshold=None):
    X = onehot_transform(ds.drop(label)).data
    y = ds.column(label)
    if loss != "linear":
        threshold = float(y.mean()) if threshold is None else threshold
        y = binarize_label(y, threshold)
    return X, y, threshold


def _cmd_train(args) -> int:
    schema = read_schema(args.schema)
    ds = load_dataset(args.data, schema)
    X, y, threshold = _xy(ds, args.label, args.loss)
    if args.g is not None:
        g = args.g
    elif args.mode in (MGD, MGD_DR):
        g = batch_size_rule(args.r if args.mode == MGD_DR else X.shape[1], args.epsilon, X.shape[0])
    else:
        g = 1
    cfg = TrainConfig(
        loss=args.loss, mode=args.mode, epsilon=args.epsilon, lam=args.lam,
        r=args.r if args.mode == MGD_DR else None, g=g,
    )
    rng = RandomSource(args.seed)
    order = rng.spawn(1).permutation(X.shape[0])
    model = mgd_train(X[order], y[order], cfg, rng)
    Path(args.out).write_text(dumps_model(model))
    summary = {"users_consumed": model.stats.users_consumed, "batches": model.stats.batches, "g": g}
    if args.test:
        test = load_dataset(args.test, schema)
        Xt, yt, _ = _xy(test, args.label, args.loss, threshold)
        summary.update(evaluate(model, Xt, yt, args.loss))
    print(json.dumps(summary))
    return 0


def _parse_grid(text: str) -> list[tuple]:
    out = []
    for point in text.split(";"):
        if point.strip():
            out.append(tuple(float(v) for v in point.split(",")))
    return out


def _cmd_audit(args) -> int:
    schema = read_schema(args.schema) if args.schema else None
    mech = make_mechanism(args.mechanism, d=args.d, k=args.k, rows=args.rows, seed=args.seed, schema=schema)
    grid = _parse_grid(args.grid) if args.grid else default_grid(mech)
    ok = True
    for eps in args.epsilon:
        res = max_ldp_ratio(mech, grid, eps)
        passed = res.passes(args.tol)
        ok &= passed
        record = {
            "mechanism": args.mechanism,
            "d": len(schema) if schema is not None else args.d,
            "k": args.k if args.mechanism == "bs" else None,
            "epsilon": eps,
            "max_ratio": res.ratio,
            "bound": math.exp(eps),
            "ratio_over_bound": res.ratio / math.exp(eps),
            "witness_inputs": [list(res.witness[0]), list(res.witness[1])],
            "witness_output": _jsonable(res.output),
            "pass": passed,
        }
        print(json.dumps(record))
    return 0 if ok or not args.strict else 1


def _jsonable(x):
    if isinstance(x, (tuple, list)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _cmd_experiment(args) -> int:
    config = load_config(args.config)
    out = args.out or config.output
    if out is None:
        raise LDPError("no output path: set 'output' in the config or pass --out")
    count = write_metrics(run_experiment(config), out)
    print(f"wrote {count} records to {out}", file=sys.stderr)
    if args.summary:
        for (method, eps, metric), value in summarize(read_metrics(out)).items():
            print(f"{method}\t{eps!r}\t{metric}\t{value!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldpkit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("perturb", help="dataset -> report file")
    s.add_argument("--schema", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--method", default="multi", help="multi (ours) or hybrid")
    s.add_argument("--matrix", default=AUTO, choices=(AUTO, ORTHOGONAL, RANDOM_PROJECTION))
    s.add_argument("--beta", type=float, default=DEFAULT_BETA)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_perturb)

    s = sub.add_parser("aggregate", help="report file -> estimates (JSON)")
    s.add_argument("reports")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_aggregate)

    s = sub.add_parser("train", help="private ERM on a dataset")
    s.add_argument("--schema", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--label", default="y")
    s.add_argument("--loss", default="linear", choices=LOSSES)
    s.add_argument("--mode", default=MGD, choices=MODES)
    s.add_argument("--epsilon", type=float, default=1.0)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    s.add_argument("--r", type=int, default=20)
    s.add_argument("--g", type=int, help="mini-batch size (default: the batch-size rule)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test", help="held-out CSV to evaluate on")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("audit", help="exact LDP ratio audit")
    s.add_argument("--mechanism", required=True, choices=MECHANISMS)
    s.add_argument("--d", type=int, default=1)
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--rows", type=int, help="random-projection rows (default: orthogonal matrix)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--schema", help="schema file for the multi mechanism")
    s.add_argument("--epsilon", type=float, nargs="+", required=True)
    s.add_argument("--grid", help="inputs as 'a,b;c,d;...' (default: corners + lattice)")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--strict", action="store_true", help="exit 1 when any ratio exceeds the bound")
    s.set_defaults(func=_cmd_audit)

    s = sub.add_parser("experiment", help="config -> metrics (JSON lines)")
    s.add_argument("config")
    s.add_argument("--out")
    s.add_argument("--summary", action="store_true", help="print medians per (method, epsilon, metric)")
    s.set_defaults(func=_cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except LDPError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
