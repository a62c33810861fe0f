"""Empirical risk minimization from locally private gradients.

Training consumes each user at most once. A user computes the regularized
gradient at the current parameters, clamps it to the unit box, perturbs it
and submits. Every ``g`` users the aggregator averages the submissions and
takes a step of size 1/sqrt(batch number).

Modes:

``nonprivate_sgd``  g = 1, exact (clamped) gradients.
``private_sgd``     g = 1, one perturbed gradient per step.
``mgd``             mini-batches of g one-bit gradient reports.
``mgd_dr``          ``mgd`` on inputs projected by a random r x d matrix of
                    ±1/d entries (linear regression only).
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DomainViolation,
    EmptyInput,
    InsufficientData,
    LengthMismatch,
    RandomSource,
    SpecError,
    as_epsilon,
    c_eps,
)
from .mech_numeric import FIXED, duchi_constants, onebit_plus_probability

LINEAR = "linear"
LOGISTIC = "logistic"
HINGE = "hinge"
LOSSES = (LINEAR, LOGISTIC, HINGE)

PRIVATE_SGD = "private_sgd"
MGD = "mgd"
MGD_DR = "mgd_dr"
NONPRIVATE_SGD = "nonprivate_sgd"
MODES = (PRIVATE_SGD, MGD, MGD_DR, NONPRIVATE_SGD)

ONEBIT = "onebit"
DUCHI = "duchi"


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_label(kind: str, y) -> None:
    y = np.asarray(y, dtype=float)
    if kind == LINEAR:
        if not np.all((y >= -1.0) & (y <= 1.0)):
            raise DomainViolation("y", y[~((y >= -1) & (y <= 1))].flat[0], "is outside [-1, 1]")
    elif not np.all(np.abs(y) == 1.0):
        raise DomainViolation("y", y[np.abs(y) != 1].flat[0], "must be -1 or +1")


def loss_value(kind: str, beta, x, y, lam: float = 0.0):
    """Regularized loss l(beta; x, y) + lam/2 ||beta||^2; rows of x broadcast."""
    beta = np.asarray(beta, dtype=float)
    margin = np.asarray(x, dtype=float) @ beta
    if kind == LINEAR:
        base = (margin - y) ** 2
    elif kind == LOGISTIC:
        base = np.logaddexp(0.0, -y * margin)
    elif kind == HINGE:
        base = np.maximum(0.0, 1.0 - y * margin)
    else:
        raise SpecError(f"unknown loss {kind!r}")
    return base + 0.5 * lam * float(beta @ beta)


def gradient_batch(kind: str, beta: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Per-row (sub)gradients of the regularized loss, shape ``X.shape``."""
    margin = X @ beta
    if kind == LINEAR:
        coef = 2.0 * (margin - y)
    elif kind == LOGISTIC:
        coef = -y * _sigmoid(-y * margin)
    elif kind == HINGE:
        # zero subgradient at the kink y x.beta == 1
        coef = np.where(y * margin < 1.0, -y, 0.0)
    else:
        raise SpecError(f"unknown loss {kind!r}")
    return coef[:, None] * X + lam * beta


def loss_gradient(kind: str, params, x, y: float, lam: float = 0.0) -> np.ndarray:
    beta = np.asarray(getattr(params, "alpha", params), dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape != beta.shape:
        raise LengthMismatch(f"x has {x.shape[0]} entries, parameters have {beta.shape[0]}")
    _check_label(kind, y)
    return gradient_batch(kind, beta, x[None, :], np.array([float(y)]), lam)[0]


def clip_gradient(grad) -> np.ndarray:
    return np.clip(np.asarray(grad, dtype=float), -1.0, 1.0)


# Dimension reduction ----------------------------------------------------------


@dataclass(frozen=True)
class ReductionMatrix:
    matrix: np.ndarray
    seed: int

    @property
    def r(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def build_reduction_matrix(r: int, d: int, seed: int) -> ReductionMatrix:
    if not 1 <= r <= d:
        raise SpecError(f"need 1 <= r <= d, got r={r}, d={d}")
    signs = np.where(RandomSource(seed).uniform((r, d)) < 0.5, 1.0, -1.0)
    return ReductionMatrix(signs / d, int(seed))


def reduce_tuple(P: ReductionMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != P.d:
        raise LengthMismatch(f"x has {x.shape[-1]} entries, P expects {P.d}")
    return x @ P.matrix.T


# Training ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    loss: str = LINEAR
    mode: str = MGD
    epsilon: float = 1.0
    lam: float = 1e-4
    r: int | None = None
    g: int = 1
    max_users: int | None = None
    stop_delta: float = 1e-6
    # perturbation used by private_sgd; mgd modes always use one-bit reports
    sgd_perturbation: str = DUCHI
    reduction_seed: int | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise SpecError(f"unknown loss {self.loss!r}")
        if self.mode not in MODES:
            raise SpecError(f"unknown mode {self.mode!r}")
        if self.g < 1:
            raise SpecError("g must be >= 1")
        if not self.stop_delta > 0:
            raise SpecError("stop_delta must be > 0")
        if self.lam < 0:
            raise SpecError("lambda must be >= 0")
        if self.mode == MGD_DR:
            if self.loss != LINEAR:
                raise SpecError("dimension reduction applies to linear regression only")
            if self.r is None or self.r < 1:
                raise SpecError("mgd_dr needs r >= 1")
        if self.sgd_perturbation not in (ONEBIT, DUCHI):
            raise SpecError(f"unknown perturbation {self.sgd_perturbation!r}")
        if self.mode != NONPRIVATE_SGD:
            as_epsilon(self.epsilon)

    @property
    def batch_size(self) -> int:
        return 1 if self.mode in (PRIVATE_SGD, NONPRIVATE_SGD) else self.g


@dataclass
class TrainStats:
    users_consumed: int = 0
    batches: int = 0
    mechanism_calls: int = 0
    epsilon_per_user: float = 0.0
    stopped_early: bool = False


@dataclass
class ModelParams:
    alpha: np.ndarray
    reduction: ReductionMatrix | None = None
    config: TrainConfig | None = None
    seed: int | None = None
    stats: TrainStats = field(default_factory=TrainStats)

    def features(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X if self.reduction is None else reduce_tuple(self.reduction, X)

    def predict(self, X) -> np.ndarray:
        return self.features(X) @ self.alpha


def batch_size_rule(d: int, epsilon: float, n: int) -> int:
    """max{2 d log d / eps^2, n / 1000}, rounded up, at least 1."""
    return max(1, math.ceil(max(2.0 * d * math.log(d) / epsilon ** 2, n / 1000.0)))


def mgd_train(X, y, config: TrainConfig, rng: RandomSource) -> ModelParams:
    """Run the iterative private ERM procedure over users in the given order."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LengthMismatch("X must be (n, d) with one label per row")
    if not np.all(np.abs(X) <= 1.0):
        raise DomainViolation("x", float(np.max(np.abs(X))), "is outside [-1, 1]")
    _check_label(config.loss, y)
    n_avail = X.shape[0] if config.max_users is None else min(X.shape[0], config.max_users)
    g = config.batch_size
    if n_avail < g:
        raise InsufficientData(f"{n_avail} users available, mini-batch needs {g}")

    reduction = None
    if config.mode == MGD_DR:
        seed = config.reduction_seed if config.reduction_seed is not None else rng.spawn(0x5EED).seed
        reduction = build_reduction_matrix(config.r, X.shape[1], seed)
        X = reduce_tuple(reduction, X[:n_avail])
    model = ModelParams(np.zeros(X.shape[1]), reduction, config, rng.seed)

    if g == 1:
        _train_sequential(model, X[:n_avail], y[:n_avail], config, rng)
    else:
        _train_batched(model, X[:n_avail], y[:n_avail], config, rng, g)
    return model


def _train_batched(model: ModelParams, X, y, config: TrainConfig, rng: RandomSource, g: int) -> None:
    eps = as_epsilon(config.epsilon)
    r = X.shape[1]
    scale = r * c_eps(eps)
    stats = model.stats
    alpha = model.alpha
    for b in range(1, X.shape[0] // g + 1):
        rows = slice((b - 1) * g, b * g)
        grads = clip_gradient(gradient_batch(config.loss, alpha, X[rows], y[rows], config.lam))
        j = rng.integers(r, size=g)
        chosen = grads[np.arange(g), j]
        signs = np.where(rng.uniform(g) < onebit_plus_probability(chosen, eps), 1.0, -1.0)
        mean_grad = np.bincount(j, weights=signs, minlength=r) * scale / g
        step = mean_grad / math.sqrt(b)
        alpha = alpha - step
        stats.users_consumed += g
        stats.mechanism_calls += g
        stats.batches = b
        if np.max(np.abs(step)) < config.stop_delta:
            stats.stopped_early = True
            break
    model.alpha = alpha
    stats.epsilon_per_user = eps


def _train_sequential(model: ModelParams, X, y, config: TrainConfig, rng: RandomSource) -> None:
    n, r = X.shape
    stats = model.stats
    alpha = model.alpha.copy()
    kind, lam = config.loss, config.lam
    private = config.mode == PRIVATE_SGD
    use_duchi = private and config.sgd_perturbation == DUCHI
    if private:
        eps = as_epsilon(config.epsilon)
        half_tanh = 0.5 * math.tanh(0.5 * eps)
        onebit_mag = r * c_eps(eps)
        if use_duchi:
            const = duchi_constants(r, eps, FIXED)
            plus_cdf = list(np.cumsum(const.plus_weights) / const.plus_size)
            minus_cdf = list(np.cumsum(const.minus_weights) / const.minus_size)
    chunk = 4096
    k = 0
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        m = stop - start
        if use_duchi:
            U_v = rng.uniform((m, r))
            U_u = rng.uniform(m)
            U_a = rng.uniform(m)
            U_perm = rng.uniform((m, r))
        elif private:
            J = rng.integers(r, size=m)
            U_s = rng.uniform(m)
        for i in range(m):
            x = X[start + i]
            yi = y[start + i]
            margin = float(x @ alpha)
            if kind == LINEAR:
                coef = 2.0 * (margin - yi)
            elif kind == LOGISTIC:
                coef = -yi / (1.0 + math.exp(min(700.0, yi * margin)))
            else:
                coef = -yi if yi * margin < 1.0 else 0.0
            grad = coef * x + lam * alpha
            np.clip(grad, -1.0, 1.0, out=grad)
            k += 1
            gamma = 1.0 / math.sqrt(k)
            if not private:
                step = gamma * grad
                alpha -= step
                delta = float(np.max(np.abs(step)))
            elif use_duchi:
                v = np.where(U_v[i] < 0.5 + 0.5 * grad, 1.0, -1.0)
                cdf = plus_cdf if U_u[i] < const.p_u else minus_cdf
                a = bisect.bisect_right(cdf, U_a[i])
                signs = -v
                pick = np.argsort(U_perm[i])[:a]
                signs[pick] = v[pick]
                step = (gamma * const.B) * signs
                alpha -= step
                delta = gamma * const.B
                stats.mechanism_calls += 1
            else:
                jj = J[i]
                p_plus = 0.5 + half_tanh * grad[jj]
                sign = 1.0 if U_s[i] < p_plus else -1.0
                alpha[jj] -= gamma * sign * onebit_mag
                delta = gamma * onebit_mag
                stats.mechanism_calls += 1
            stats.users_consumed = k
            stats.batches = k
            if delta < config.stop_delta:
                stats.stopped_early = True
                model.alpha = alpha
                stats.epsilon_per_user = config.epsilon if private else 0.0
                return
    model.alpha = alpha
    stats.epsilon_per_user = config.epsilon if private else 0.0


# Evaluation -------------------------------------------------------------------


def evaluate(params: ModelParams, X, y, kind: str | None = None) -> dict[str, float]:
    """MSE for linear models, misclassification rate otherwise (sign(0) = +1)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise EmptyInput("empty test set")
    kind = kind or (params.config.loss if params.config else LINEAR)
    pred = params.predict(X)
    if kind == LINEAR:
        return {"mse": float(np.mean((pred - y) ** 2))}
    labels = np.where(pred >= 0, 1.0, -1.0)
    return {"misclassification_rate": float(np.mean(labels != y))}


def objective(kind: str, beta, X, y, lam: float) -> float:
    return float(np.mean(loss_value(kind, beta, X, y, 0.0)) + 0.5 * lam * float(np.dot(beta, beta)))


# Serialization ----------------------------------------------------------------


def dumps_model(model: ModelParams) -> str:
    cfg = model.config or TrainConfig()
    lines = [
        f"mode={cfg.mode}",
        f"loss={cfg.loss}",
        f"lambda={cfg.lam!r}",
        f"epsilon={float(cfg.epsilon)!r}",
        f"r={model.alpha.shape[0]}",
        f"seed={model.seed}",
        "alpha=" + ",".join(repr(float(a)) for a in model.alpha),
    ]
    if model.reduction is not None:
        lines.append(f"p_seed={model.reduction.seed}")
        lines.append(f"p_d={model.reduction.d}")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> ModelParams:
    fields = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        alpha = np.array([float(v) for v in fields["alpha"].split(",") if v], dtype=float)
        mode = fields["mode"]
        reduction = None
        if "p_seed" in fields:
            reduction = build_reduction_matrix(int(fields["r"]), int(fields["p_d"]), int(fields["p_seed"]))
        cfg = TrainConfig(
            loss=fields["loss"],
            mode=mode,
            epsilon=float(fields["epsilon"]),
            lam=float(fields["lambda"]),
            r=int(fields["r"]) if mode == MGD_DR else None,
            reduction_seed=reduction.seed if reduction else None,
        )
    except KeyError as exc:
        raise SpecError(f"model record lacks field {exc.args[0]!r}") from None
    seed = fields.get("seed")
    return ModelParams(alpha, reduction, cfg, None if seed in (None, "None") else int(seed))

