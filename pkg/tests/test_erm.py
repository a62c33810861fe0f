import math

import numpy as np
import pytest

from ldpkit.audit import OneBit, exact_moments
from ldpkit.core import DomainViolation, EmptyInput, InsufficientData, LengthMismatch, RandomSource, SpecError
from ldpkit.erm import (
    HINGE,
    LINEAR,
    LOGISTIC,
    MGD,
    MGD_DR,
    NONPRIVATE_SGD,
    PRIVATE_SGD,
    ModelParams,
    TrainConfig,
    batch_size_rule,
    build_reduction_matrix,
    clip_gradient,
    dumps_model,
    evaluate,
    loads_model,
    loss_gradient,
    loss_value,
    mgd_train,
    objective,
    reduce_tuple,
)


def finite_difference(kind, beta, x, y, lam, h=1e-6):
    grad = np.zeros_like(beta)
    for i in range(beta.size):
        e = np.zeros_like(beta)
        e[i] = h
        grad[i] = (loss_value(kind, beta + e, x, y, lam) - loss_value(kind, beta - e, x, y, lam)) / (2 * h)
    return grad


def smooth_points(kind, count, seed, d=6):
    rng = RandomSource(seed)
    out = []
    while len(out) < count:
        beta = rng.normal(d)
        x = 2 * rng.uniform(d) - 1
        y = float(2 * rng.uniform() - 1) if kind == LINEAR else float(1 if rng.uniform() < 0.5 else -1)
        if kind == HINGE and abs(y * float(x @ beta) - 1) < 1e-3:
            continue
        out.append((beta, x, y))
    return out


# Gradients ---------------------------------------------------------------------


def test_gradient_examples():
    x = np.array([0.5, -1.0, 0.25])
    zero = np.zeros(3)
    assert np.allclose(loss_gradient(LINEAR, zero, x, 0.4), -2 * 0.4 * x)
    assert np.allclose(loss_gradient(LOGISTIC, zero, x, -1.0), x / 2)
    beta = np.array([4.0, 0.0, 0.0])  # y x.beta = 2
    assert np.array_equal(loss_gradient(HINGE, beta, x, 1.0), np.zeros(3))


def test_hinge_kink_uses_zero_branch():
    x = np.array([1.0, 0.0])
    beta = np.array([1.0, 3.0])
    assert np.array_equal(loss_gradient(HINGE, beta, x, 1.0), np.zeros(2))


@pytest.mark.parametrize("kind", [LINEAR, LOGISTIC, HINGE])
def test_gradients_match_finite_differences(kind):
    for beta, x, y in smooth_points(kind, 100, seed=hash(kind) % 1000):
        lam = 1e-2
        analytic = loss_gradient(kind, beta, x, y, lam)
        numeric = finite_difference(kind, beta, x, y, lam)
        scale = max(np.max(np.abs(analytic)), 1e-8)
        assert np.max(np.abs(analytic - numeric)) / scale <= 1e-5


def test_gradient_errors():
    with pytest.raises(LengthMismatch):
        loss_gradient(LINEAR, np.zeros(2), np.zeros(3), 0.0)
    with pytest.raises(DomainViolation):
        loss_gradient(LOGISTIC, np.zeros(2), np.zeros(2), 0.5)
    with pytest.raises(DomainViolation):
        loss_gradient(LINEAR, np.zeros(2), np.zeros(2), 2.0)


def test_clip_gradient():
    assert np.array_equal(clip_gradient([0.5, -0.5]), [0.5, -0.5])
    assert np.array_equal(clip_gradient([3, -7]), [1, -1])
    g = RandomSource(0).normal(50) * 4
    assert np.array_equal(clip_gradient(clip_gradient(g)), clip_gradient(g))


# Reduction -----------------------------------------------------------------------


def test_reduction_matrix():
    P = build_reduction_matrix(3, 10, seed=4)
    assert np.allclose(np.abs(P.matrix), 0.1)
    assert np.array_equal(P.matrix, build_reduction_matrix(3, 10, seed=4).matrix)
    one = build_reduction_matrix(1, 1, seed=0)
    assert abs(one.matrix[0, 0]) == 1.0
    X = 2 * RandomSource(5).uniform((10_000, 10)) - 1
    assert np.all(np.abs(reduce_tuple(P, X)) <= 1.0)
    assert np.array_equal(reduce_tuple(P, np.zeros(10)), np.zeros(3))
    with pytest.raises(LengthMismatch):
        reduce_tuple(P, np.zeros(4))
    with pytest.raises(SpecError):
        build_reduction_matrix(5, 3, seed=0)


def test_reduction_cancellation():
    # rows carrying equal numbers of +1/d and -1/d send the all-ones vector to 0
    for seed in range(200):
        P = build_reduction_matrix(4, 6, seed)
        out = reduce_tuple(P, np.ones(6))
        balanced = (P.matrix > 0).sum(axis=1) == 3
        assert np.allclose(out[balanced], 0.0)


# Perturbed gradient averaging -----------------------------------------------------


def test_batch_average_unbiased_by_enumeration():
    eps = 0.7
    grads = [np.array([0.3, -0.9]), np.array([1.0, 1.0]), np.array([-0.2, 0.0])]
    expected = np.mean(grads, axis=0)
    exact = np.mean([exact_moments(OneBit(2), g, eps).mean for g in grads], axis=0)
    assert np.allclose(exact, expected, atol=1e-9)


def test_batch_size_rule():
    assert batch_size_rule(40, 0.8, 450_000) == math.ceil(2 * 40 * math.log(40) / 0.64)
    assert batch_size_rule(2, 100.0, 5_000_000) == 5000
    assert batch_size_rule(1, 10.0, 10) == 1


# Training ------------------------------------------------------------------------


def linear_data(n, d, seed, noise=0.0):
    rng = RandomSource(seed)
    X = 2 * rng.uniform((n, d)) - 1
    beta = (2 * rng.uniform(d) - 1) / d
    y = np.clip(X @ beta + noise * rng.normal(n), -1, 1)
    return X, y, beta


def test_nonprivate_sgd_converges():
    X, y, _ = linear_data(100_000, 5, seed=1)
    model = mgd_train(X, y, TrainConfig(mode=NONPRIVATE_SGD), RandomSource(0))
    assert evaluate(model, X[:5000], y[:5000])["mse"] <= 1e-2


def test_mgd_large_epsilon_near_nonprivate():
    X, y, _ = linear_data(200_000, 5, seed=2, noise=0.1)
    Xtr, ytr, Xte, yte = X[:180_000], y[:180_000], X[180_000:], y[180_000:]
    ref = evaluate(mgd_train(Xtr, ytr, TrainConfig(mode=NONPRIVATE_SGD), RandomSource(0)), Xte, yte)["mse"]
    g = batch_size_rule(5, 1e6, Xtr.shape[0])
    mgd = mgd_train(Xtr, ytr, TrainConfig(mode=MGD, epsilon=1e6, g=g), RandomSource(1))
    assert evaluate(mgd, Xte, yte)["mse"] <= 2 * ref


def test_training_budget_accounting():
    X, y, _ = linear_data(10_000, 4, seed=3)
    for mode, g in [(MGD, 100), (PRIVATE_SGD, 1)]:
        cfg = TrainConfig(mode=mode, epsilon=0.5, g=g, stop_delta=1e-12)
        model = mgd_train(X, y, cfg, RandomSource(4))
        stats = model.stats
        assert stats.users_consumed <= X.shape[0]
        assert stats.mechanism_calls == stats.users_consumed
        assert stats.epsilon_per_user == 0.5
        assert stats.users_consumed == X.shape[0]


def test_mgd_dr_trains_in_reduced_space():
    X, y, _ = linear_data(50_000, 30, seed=5)
    cfg = TrainConfig(mode=MGD_DR, epsilon=1.0, r=5, g=500)
    model = mgd_train(X, y, cfg, RandomSource(6))
    assert model.alpha.shape == (5,)
    assert model.reduction.r == 5 and model.reduction.d == 30
    assert np.isfinite(evaluate(model, X[:100], y[:100])["mse"])


def test_config_validation():
    with pytest.raises(SpecError):
        TrainConfig(loss=LOGISTIC, mode=MGD_DR, r=5)
    with pytest.raises(SpecError):
        TrainConfig(g=0)
    with pytest.raises(SpecError):
        TrainConfig(stop_delta=0)
    with pytest.raises(InsufficientData):
        mgd_train(np.zeros((5, 2)), np.zeros(5), TrainConfig(mode=MGD, g=10), RandomSource(0))


def test_objective_non_increasing_over_epochs():
    # per-sample steps leave O(gamma^2) jitter near the optimum, hence the small slack
    X, y, _ = linear_data(100, 3, seed=7, noise=0.05)
    lam, epochs = 1e-2, 12
    Xr, yr = np.tile(X, (epochs, 1)), np.tile(y, epochs)
    values = [objective(LINEAR, np.zeros(3), X, y, lam)]
    for e in range(1, epochs + 1):
        cfg = TrainConfig(mode=NONPRIVATE_SGD, lam=lam, stop_delta=1e-300, max_users=100 * e)
        model = mgd_train(Xr, yr, cfg, RandomSource(0))
        values.append(objective(LINEAR, model.alpha, X, y, lam))
    assert all(b <= a + 1e-6 for a, b in zip(values, values[1:]))
    assert values[-1] < values[1] < values[0]


# Evaluation and I/O -----------------------------------------------------------------


def test_evaluate_examples():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]])
    beta = np.array([0.5, -0.25])
    perfect = ModelParams(beta, config=TrainConfig())
    assert evaluate(perfect, X, X @ beta)["mse"] == 0.0
    labels = np.array([1.0, -1.0, 1.0, -1.0])
    clf = ModelParams(np.array([1.0, -1.0]), config=TrainConfig(loss=LOGISTIC))
    assert evaluate(clf, X, labels)["misclassification_rate"] == 0.0
    zero = ModelParams(np.zeros(2), config=TrainConfig(loss=HINGE))
    assert evaluate(zero, X, labels)["misclassification_rate"] == 0.5
    rate = evaluate(zero, X, np.array([1.0, -1.0, -1.0, -1.0]))["misclassification_rate"]
    assert rate == 0.75 and 0 <= rate <= 1
    with pytest.raises(EmptyInput):
        evaluate(zero, np.zeros((0, 2)), np.zeros(0))


def test_model_roundtrip():
    X, y, _ = linear_data(5000, 12, seed=8)
    model = mgd_train(X, y, TrainConfig(mode=MGD_DR, epsilon=1.0, r=4, g=100), RandomSource(9))
    text = dumps_model(model)
    back = loads_model(text)
    assert np.array_equal(back.alpha, model.alpha)
    assert np.array_equal(back.reduction.matrix, model.reduction.matrix)
    assert np.array_equal(back.predict(X[:10]), model.predict(X[:10]))
    assert back.config.mode == MGD_DR and back.config.lam == model.config.lam
