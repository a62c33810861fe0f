"""Config-driven experiments emitting one JSON metrics record per line."""
from __future__ import annotations

import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..core import RandomSource, SpecError
from ..erm import (
    LINEAR,
    LOSSES,
    MGD,
    MGD_DR,
    MODES,
    NONPRIVATE_SGD,
    PRIVATE_SGD,
    TrainConfig,
    batch_size_rule,
    evaluate,
    mgd_train,
)
from ..mech_categorical import AUTO, DEFAULT_BETA
from ..mech_multi import linf_errors, true_statistics
from .data import Dataset, binarize_label, kfold_indices, load_dataset, onehot_transform
from .pipeline import canonical_method, estimate_protocol, run_protocol
from .synth import LABEL, SynthSpec, parse_frequency_list, synth_generate

log = logging.getLogger(__name__)

MEANS_FREQS = "means_freqs"
ERM = "erm"
TASKS = (MEANS_FREQS, ERM)
DEFAULT_EPSILONS = (0.05, 0.1, 0.2, 0.4, 0.8)
DEFAULT_METHODS = {MEANS_FREQS: ("ours", "hybrid"), ERM: (PRIVATE_SGD, MGD, MGD_DR, NONPRIVATE_SGD)}
AUTO_RULE = "auto"


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = MEANS_FREQS
    dataset: str | None = None
    schema: str | None = None
    synth: SynthSpec | None = None
    synth_n: int = 0
    synth_seed: int | None = None
    methods: tuple[str, ...] = ()
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    repetitions: int = 100
    seed: int = 0
    output: str | None = None
    beta: float = DEFAULT_BETA
    matrix: str = AUTO
    # erm
    label: str = LABEL
    loss: str = LINEAR
    lam: float = 1e-4
    r: int = 20
    folds: int = 10
    max_folds: int | None = None
    batch_rule: str = AUTO_RULE
    sgd_perturbation: str = "duchi"
    record_timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise SpecError(f"unknown task {self.task!r}")
        if not self.methods:
            object.__setattr__(self, "methods", DEFAULT_METHODS[self.task])
        if self.repetitions < 1:
            raise SpecError("repetitions must be >= 1")
        if not self.epsilons or any(not (e > 0 and math.isfinite(e)) for e in self.epsilons):
            raise SpecError("epsilon grid entries must be finite and > 0")
        if (self.dataset is None) == (self.synth is None):
            raise SpecError("give exactly one of a dataset path or a synthetic spec")
        if self.dataset is not None and self.schema is None:
            raise SpecError("a dataset needs a schema path")
        if self.synth is not None and self.synth_n < 1:
            raise SpecError("synthetic data needs synth_n >= 1")
        if self.task == MEANS_FREQS:
            for m in self.methods:
                try:
                    canonical_method(m)
                except ValueError as exc:
                    raise SpecError(str(exc)) from None
        else:
            for m in self.methods:
                if m not in MODES:
                    raise SpecError(f"unknown training mode {m!r}")
            if self.loss not in LOSSES:
                raise SpecError(f"unknown loss {self.loss!r}")
            if self.folds < 2:
                raise SpecError("folds must be >= 2")
            if self.batch_rule != AUTO_RULE:
                try:
                    if int(self.batch_rule) < 1:
                        raise ValueError
                except ValueError:
                    raise SpecError(f"batch_rule must be 'auto' or a positive integer, not {self.batch_rule!r}") from None
        if self.jobs < 1:
            raise SpecError("jobs must be >= 1")

    @property
    def fold_count(self) -> int:
        return self.folds if self.max_folds is None else min(self.folds, self.max_folds)


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


_SCALARS = {
    "task": str, "dataset": str, "schema": str, "output": str, "matrix": str, "label": str,
    "loss": str, "batch_rule": str, "sgd_perturbation": str,
    "synth_n": int, "synth_seed": int, "repetitions": int, "seed": int, "r": int, "folds": int,
    "max_folds": int, "jobs": int,
    "beta": float, "lambda": float,
    "record_timing": _bool,
}
_SYNTH = {
    "synth_numeric": ("numeric_means", _floats),
    "synth_categorical": ("categorical", parse_frequency_list),
    "synth_latent_rank": ("latent_rank", int),
    "synth_latent_noise": ("latent_noise", float),
    "synth_label_noise": ("label_noise", float),
    "synth_label_signal": ("label_signal", float),
}


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Relative ``dataset``/``schema``/``output`` paths resolve against
    ``base_dir`` when given.
    """
    kwargs, synth = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise SpecError(f"line {lineno}: expected key=value, found {raw!r}")
        try:
            if key in _SYNTH:
                name, conv = _SYNTH[key]
                synth[name] = conv(value)
            elif key == "methods":
                kwargs["methods"] = tuple(m.strip() for m in value.split(",") if m.strip())
            elif key == "epsilons":
                kwargs["epsilons"] = _floats(value)
            elif key in _SCALARS:
                kwargs["lam" if key == "lambda" else key] = _SCALARS[key](value)
            else:
                raise SpecError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise SpecError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    if synth:
        kwargs["synth"] = SynthSpec(**synth)
    if base_dir is not None:
        for key in ("dataset", "schema", "output"):
            if key in kwargs and not Path(kwargs[key]).is_absolute():
                kwargs[key] = str(base_dir / kwargs[key])
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    task: str
    epsilon: float
    repetition: int
    fold: int | str | None
    metric: str
    value: float
    wall_time: float | None = None

    def to_json(self) -> str:
        # json writes floats with round-trip precision; NaN becomes null
        d = asdict(self)
        if isinstance(d["value"], float) and not math.isfinite(d["value"]):
            d["value"] = None
        return json.dumps(d, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        d = json.loads(line)
        return cls(**{f.name: d.get(f.name) for f in fields(cls)})


def _key(name: str) -> int:
    return zlib.crc32(name.encode())


def load_population(config: ExperimentConfig) -> Dataset:
    if config.dataset is not None:
        return load_dataset(config.dataset, config.schema)
    seed = config.synth_seed
    rng = RandomSource(seed) if seed is not None else RandomSource(config.seed).spawn(_key("synth"))
    return synth_generate(config.synth, config.synth_n, rng)


# Jobs -------------------------------------------------------------------------
# Each job owns a RandomSource derived from (seed, method, epsilon index,
# repetition[, fold]) so results do not depend on execution order.

_STATE: dict = {}


def _init_worker(config: ExperimentConfig, dataset: Dataset) -> None:
    _STATE.clear()
    _STATE["config"] = config
    _STATE["dataset"] = dataset
    if config.task == MEANS_FREQS:
        _STATE["truth"] = true_statistics(dataset.data, dataset.schema)
    else:
        features = onehot_transform(dataset.drop(config.label))
        _STATE["X"] = features.data
        _STATE["y"] = dataset.column(config.label)
        _STATE["folds"] = kfold_indices(len(dataset), config.folds, RandomSource(config.seed).spawn(_key("folds")))


def _means_job(job) -> list[MetricsRecord]:
    method, e_idx, rep = job
    config, dataset = _STATE["config"], _STATE["dataset"]
    eps = config.epsilons[e_idx]
    rng = RandomSource(config.seed).spawn(_key(canonical_method(method)), e_idx, rep)
    t0 = time.perf_counter()
    batch, matrices = run_protocol(dataset.data, dataset.schema, method, eps, rng, config.matrix, config.beta)
    est = estimate_protocol(batch, dataset.schema, matrices)
    mean_err, freq_err = linf_errors(est, _STATE["truth"])
    wall = time.perf_counter() - t0 if config.record_timing else None
    out = []
    if not math.isnan(mean_err):
        out.append(MetricsRecord(method, MEANS_FREQS, eps, rep, None, "linf_mean", mean_err, wall))
    if not math.isnan(freq_err):
        out.append(MetricsRecord(method, MEANS_FREQS, eps, rep, None, "linf_freq", freq_err, wall))
    return out


def erm_batch_size(config: ExperimentConfig, mode: str, d: int, epsilon: float, n: int) -> int:
    if mode in (PRIVATE_SGD, NONPRIVATE_SGD):
        return 1
    if config.batch_rule != AUTO_RULE:
        return int(config.batch_rule)
    return batch_size_rule(min(config.r, d) if mode == MGD_DR else d, epsilon, n)


def fold_split(config: ExperimentConfig, rep: int, fold: int):
    """Training rows (shuffled) and test rows with labels ready for ``loss``."""
    folds, X, y = _STATE["folds"], _STATE["X"], _STATE["y"]
    test = folds[fold]
    train = np.concatenate([folds[f] for f in range(config.folds) if f != fold])
    train = train[RandomSource(config.seed).spawn(_key("shuffle"), rep, fold).permutation(train.size)]
    y_tr, y_te = y[train], y[test]
    if config.loss != LINEAR:
        threshold = float(y_tr.mean())
        y_tr, y_te = binarize_label(y_tr, threshold), binarize_label(y_te, threshold)
    return X[train], y_tr, X[test], y_te


def _erm_job(job) -> MetricsRecord:
    mode, e_idx, rep, fold = job
    config = _STATE["config"]
    eps = config.epsilons[e_idx]
    X_tr, y_tr, X_te, y_te = fold_split(config, rep, fold)
    t0 = time.perf_counter()
    g = erm_batch_size(config, mode, X_tr.shape[1], eps, X_tr.shape[0])
    tc = TrainConfig(
        loss=config.loss, mode=mode, epsilon=eps, lam=config.lam,
        # r cannot exceed the encoded dimension; small schemas reduce to d
        r=min(config.r, X_tr.shape[1]) if mode == MGD_DR else None, g=g, sgd_perturbation=config.sgd_perturbation,
    )
    rng = RandomSource(config.seed).spawn(_key(mode), e_idx, rep, fold)
    model = mgd_train(X_tr, y_tr, tc, rng)
    metric, value = next(iter(evaluate(model, X_te, y_te, config.loss).items()))
    wall = time.perf_counter() - t0 if config.record_timing else None
    return MetricsRecord(mode, ERM, eps, rep, fold, metric, value, wall)


def _means_jobs(config):
    for e_idx in range(len(config.epsilons)):
        for rep in range(config.repetitions):
            for method in config.methods:
                yield method, e_idx, rep


def _erm_groups(config):
    for e_idx in range(len(config.epsilons)):
        for rep in range(config.repetitions):
            for mode in config.methods:
                if mode == MGD_DR and config.loss != LINEAR:
                    continue
                yield [(mode, e_idx, rep, f) for f in range(config.fold_count)]


def _mean_record(records: list[MetricsRecord]) -> MetricsRecord:
    first = records[0]
    wall = sum(r.wall_time for r in records) if first.wall_time is not None else None
    value = float(np.mean([r.value for r in records]))
    return MetricsRecord(first.method, first.task, first.epsilon, first.repetition, "mean", first.metric, value, wall)


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> Iterator[MetricsRecord]:
    """Yield metrics records in a fixed order, independent of ``jobs``."""
    dataset = load_population(config) if dataset is None else dataset
    if config.task == ERM:
        if config.label not in dataset.schema.names:
            raise SpecError(f"label attribute {config.label!r} not in schema")
        if not dataset.schema[dataset.schema.index(config.label)].is_numeric:
            raise SpecError("the label attribute must be numeric")
        if MGD_DR in config.methods and config.loss != LINEAR:
            log.warning("skipping mgd_dr: dimension reduction applies to linear regression only")
    if config.jobs == 1:
        _init_worker(config, dataset)
        mapper, pool = map, None
    else:
        pool = ProcessPoolExecutor(config.jobs, initializer=_init_worker, initargs=(config, dataset))
        mapper = pool.map
    try:
        if config.task == MEANS_FREQS:
            for records in mapper(_means_job, _means_jobs(config)):
                yield from records
        else:
            groups = list(_erm_groups(config))
            flat = [job for group in groups for job in group]
            results = iter(mapper(_erm_job, flat))
            for group in groups:
                records = [next(results) for _ in group]
                yield from records
                yield _mean_record(records)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)


def write_metrics(records: Iterable[MetricsRecord], path) -> int:
    """Append-only JSONL writer; every record is flushed as soon as it arrives,
    so records produced before a failure survive it."""
    count = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            fh.flush()
            count += 1
    return count


def read_metrics(path) -> list[MetricsRecord]:
    return [MetricsRecord.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


def summarize(records: Iterable[MetricsRecord], stat=np.median) -> dict:
    """{(method, epsilon, metric): statistic over repetitions} for plotting."""
    groups: dict = {}
    for r in records:
        if r.fold not in (None, "mean") or r.value is None:
            continue
        groups.setdefault((r.method, r.epsilon, r.metric), []).append(r.value)
    return {k: float(stat(v)) for k, v in sorted(groups.items())}
