"""Synthetic populations with known ground truth.

Independent mode draws every attribute on its own: numeric values as
2*Beta(1+mu, 1-mu) - 1, whose mean is exactly mu, and categorical values
from the given frequency vector.

Latent mode (``latent_rank > 0``) couples attributes through a shared
Gaussian factor so that the encoded feature matrix is close to low rank,
which is the regime where dimension reduction helps. With ``label_noise``
set, a numeric label ``y`` is appended: y = clip(x_enc . beta* + noise, -1, 1)
where x_enc is the one-hot encoding of the other attributes and beta* is
scaled so the signal has standard deviation ``label_signal``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import CATEGORICAL, NUMERIC, AttributeSpec, RandomSource, Schema, SpecError
from .data import Dataset, onehot_transform

LABEL = "y"


@dataclass(frozen=True)
class SynthSpec:
    numeric_means: tuple[float, ...] = ()
    categorical: tuple[tuple[float, ...], ...] = ()
    latent_rank: int = 0
    latent_noise: float = 0.3
    label_noise: float | None = None
    label_signal: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "numeric_means", tuple(float(m) for m in self.numeric_means))
        object.__setattr__(self, "categorical", tuple(tuple(float(p) for p in f) for f in self.categorical))
        if not self.numeric_means and not self.categorical:
            raise SpecError("synthetic spec declares no attributes")
        for mu in self.numeric_means:
            if not -1.0 < mu < 1.0:
                raise SpecError(f"numeric mean {mu} must lie strictly inside (-1, 1)")
        for freqs in self.categorical:
            if len(freqs) < 2:
                raise SpecError("a categorical attribute needs at least 2 values")
            if min(freqs) < 0 or abs(sum(freqs) - 1.0) > 1e-9:
                raise SpecError(f"frequencies {freqs} must be nonnegative and sum to 1")
        if self.latent_rank < 0:
            raise SpecError("latent_rank must be >= 0")
        if self.label_noise is not None and self.label_noise < 0:
            raise SpecError("label_noise must be >= 0")

    @property
    def schema(self) -> Schema:
        attrs = [AttributeSpec(f"x{i + 1}", NUMERIC) for i in range(len(self.numeric_means))]
        attrs += [AttributeSpec(f"c{i + 1}", CATEGORICAL, k=len(f)) for i, f in enumerate(self.categorical)]
        if self.label_noise is not None:
            attrs.append(AttributeSpec(LABEL, NUMERIC))
        return Schema(tuple(attrs))


@dataclass
class SynthData(Dataset):
    beta_star: np.ndarray | None = None
    truth_means: dict = field(default_factory=dict)
    truth_frequencies: dict = field(default_factory=dict)


def _independent(spec: SynthSpec, n: int, rng: RandomSource) -> np.ndarray:
    cols = [2.0 * rng.beta(1.0 + mu, 1.0 - mu, size=n) - 1.0 for mu in spec.numeric_means]
    cols += [rng.choice(len(f), np.asarray(f), size=n) + 1.0 for f in spec.categorical]
    return np.column_stack(cols) if n else np.zeros((0, len(cols)))


def _latent(spec: SynthSpec, n: int, rng: RandomSource) -> np.ndarray:
    q = spec.latent_rank
    Z = rng.normal((n, q))
    cols = []
    for mu in spec.numeric_means:
        w = rng.normal(q) / math.sqrt(q)
        cols.append(np.tanh(math.atanh(mu) + Z @ w + spec.latent_noise * rng.normal(n)))
    for freqs in spec.categorical:
        k = len(freqs)
        W = rng.normal((q, k)) / math.sqrt(q)
        with np.errstate(divide="ignore"):
            logits = np.log(np.asarray(freqs))[None, :] + Z @ W
        gumbel = -np.log(-np.log(rng.uniform((n, k))))
        cols.append(np.argmax(logits + gumbel, axis=1) + 1.0)
    return np.column_stack(cols) if n else np.zeros((0, len(cols)))


def synth_generate(spec: SynthSpec, n: int, seed) -> SynthData:
    """Draw ``n`` i.i.d. users; ``seed`` is an int or a RandomSource."""
    if n < 0:
        raise SpecError("n must be >= 0")
    rng = seed if isinstance(seed, RandomSource) else RandomSource(int(seed))
    data = _latent(spec, n, rng) if spec.latent_rank else _independent(spec, n, rng)
    nnum = len(spec.numeric_means)
    truth_means, truth_freqs = {}, {}
    if not spec.latent_rank:
        truth_means = {j: mu for j, mu in enumerate(spec.numeric_means)}
        truth_freqs = {nnum + i: np.asarray(f) for i, f in enumerate(spec.categorical)}
    beta_star = None
    if spec.label_noise is not None:
        base_schema = spec.schema.without(LABEL)
        X = onehot_transform(Dataset(base_schema, data)).data
        beta_star = rng.normal(X.shape[1])
        if n > 1:
            sd = float(np.std(X @ beta_star))
            if sd > 0:
                beta_star *= spec.label_signal / sd
        y = np.clip(X @ beta_star + spec.label_noise * rng.normal(n), -1.0, 1.0)
        data = np.column_stack([data, y]) if n else np.zeros((0, data.shape[1] + 1))
    return SynthData(spec.schema, data, beta_star, truth_means, truth_freqs)


def parse_frequency_list(text: str) -> tuple[tuple[float, ...], ...]:
    """'0.5:0.3:0.2;0.25:0.75' -> ((0.5, 0.3, 0.2), (0.25, 0.75))."""
    out = []
    for group in text.split(";"):
        group = group.strip()
        if group:
            try:
                out.append(tuple(float(p) for p in group.split(":")))
            except ValueError:
                raise SpecError(f"bad frequency vector {group!r}") from None
    return tuple(out)
