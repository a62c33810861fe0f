import math

import numpy as np
import pytest

from ldpkit.audit import BassilySmith, RandomizedResponse, enumerate_distribution, exact_moments, max_ldp_ratio
from ldpkit.core import DegenerateParams, DomainViolation, EmptyInput, Overflow, RandomSource
from ldpkit.mech_categorical import (
    ORTHOGONAL,
    RANDOM_PROJECTION,
    FrequencyMatrix,
    bs_params,
    bs_perturb,
    bs_perturb_batch,
    build_matrix,
    build_orthogonal,
    build_projection,
    choose_kind,
    clip_and_renormalize,
    estimate_frequencies,
    estimate_frequencies_batch,
    orthogonal_set,
    rr_binary_perturb,
    rr_binary_perturb_batch,
)


def c_eps(eps):
    return (math.exp(eps) + 1) / (math.exp(eps) - 1)


# Randomized response -----------------------------------------------------------


def test_rr_ln3_distribution():
    dist = enumerate_distribution(RandomizedResponse(), [1], math.log(3)).as_dict()
    assert dist[1] == pytest.approx(0.75)
    out = rr_binary_perturb_batch(np.ones(200_000), math.log(3), RandomSource(0))
    assert set(np.unique(out)) == {-2.0, 2.0}
    assert np.mean(out == 2.0) == pytest.approx(0.75, abs=0.005)


@pytest.mark.parametrize("eps", [0.1, 1.0, 3.0])
@pytest.mark.parametrize("v", [1, -1])
def test_rr_exact_expectation(eps, v):
    assert exact_moments(RandomizedResponse(), [v], eps).mean[0] == pytest.approx(v, abs=1e-12)


def test_rr_monte_carlo_mean():
    out = rr_binary_perturb_batch(-np.ones(1_000_000), 1.0, RandomSource(1))
    assert -1.02 <= out.mean() <= -0.98


def test_rr_domain():
    with pytest.raises(DomainViolation):
        rr_binary_perturb(0, 1.0, RandomSource(0))


# Parameters ----------------------------------------------------------------------


def test_bs_params_example():
    p = bs_params(2, 10_000, 1.0, 0.05)
    gamma = math.sqrt(math.log(80) / 1e4)
    assert p.gamma == pytest.approx(gamma, rel=1e-12)
    assert p.gamma == pytest.approx(0.020934, abs=1e-6)
    assert p.m == math.ceil(math.log(3) * math.log(40) / gamma ** 2)
    assert p.m == 9249


def test_bs_params_beta_near_one():
    p = bs_params(2, 1000, 1.0, 1 - 1e-12)
    assert math.isfinite(p.gamma) and p.m >= 1


def test_bs_params_doubling_n():
    a, b = bs_params(8, 10_000, 1.0), bs_params(8, 20_000, 1.0)
    assert b.gamma ** 2 == pytest.approx(a.gamma ** 2 / 2)
    assert abs(b.m - 2 * a.m) <= 1


def test_choose_kind():
    assert choose_kind(16, 10_000) == ORTHOGONAL
    assert choose_kind(200, 10_000) == RANDOM_PROJECTION
    assert choose_kind(16, 10_000, RANDOM_PROJECTION) == RANDOM_PROJECTION


# Matrices ------------------------------------------------------------------------


def test_projection_entries():
    mat = build_projection(bs_params(5, 1000, 1.0), seed=3)
    dense = mat.dense_signs()
    assert set(np.unique(dense)) == {-1, 1}
    assert np.allclose(np.abs(mat.entries(np.arange(mat.rows)[:, None], np.arange(5)[None, :])), 1 / math.sqrt(mat.rows))
    assert np.array_equal(dense, build_projection(bs_params(5, 1000, 1.0), seed=3).dense_signs())
    assert not np.array_equal(dense, build_projection(bs_params(5, 1000, 1.0), seed=4).dense_signs())
    for col in range(5):
        assert float(mat.column(col) @ mat.column(col)) == pytest.approx(1.0, abs=1e-12)
    # roughly balanced signs
    assert abs(dense.mean()) < 0.05


def test_orthogonal_k2():
    mat = build_orthogonal(2)
    cols = mat.dense_signs()
    assert sorted(map(tuple, cols.T)) == [(1, -1), (1, 1)]
    assert list(cols[:, 0]) == [1, -1]
    assert int(cols[:, 0] @ cols[:, 1]) == 0


def test_orthogonal_k4_by_hand():
    # one doubling step from {[1,-1],[1,1]}
    expected = [[1, -1, 1, -1], [1, -1, -1, 1], [1, 1, 1, 1], [1, 1, -1, -1]]
    assert orthogonal_set(4) == expected
    cols = build_orthogonal(4).dense_signs()
    assert cols.T.tolist() == expected
    gram = cols.T @ cols
    assert np.array_equal(gram, 4 * np.eye(4, dtype=np.int64))


def test_orthogonal_k3_padding():
    mat = build_orthogonal(3)
    cols = mat.dense_signs()
    assert cols.shape == (4, 3)
    assert np.array_equal(cols.T @ cols, 4 * np.eye(3, dtype=np.int64))


@pytest.mark.parametrize("size", [2, 4, 8, 16, 32, 64])
def test_virtual_orthogonal_matches_explicit(size):
    assert build_orthogonal(size).dense_signs().T.tolist() == orthogonal_set(size)


def test_orthogonal_overflow():
    with pytest.raises(Overflow):
        build_orthogonal(2 ** 20 + 1)


def test_orthogonal_requires_power_of_two():
    with pytest.raises(DegenerateParams):
        FrequencyMatrix(ORTHOGONAL, 6, 3)


# Perturbation and estimation --------------------------------------------------------


def test_bs_perturb_magnitude_and_sign_rate():
    mat = build_projection(bs_params(6, 2000, math.log(3)), seed=1)
    n = 100_000
    values = np.full(n, 3)
    s, alpha = bs_perturb_batch(values, mat, math.log(3), RandomSource(2))
    assert np.allclose(np.abs(alpha), 2 * math.sqrt(mat.rows))
    agree = np.sign(alpha) == mat.signs(s, values - 1)
    assert agree.mean() == pytest.approx(0.75, abs=0.005)
    rep = bs_perturb(3, mat, math.log(3), RandomSource(5))
    assert 1 <= rep.s <= mat.rows


def test_bs_sparse_vector_expectation_is_column():
    mat = FrequencyMatrix(RANDOM_PROJECTION, 12, 5, seed=7)
    for v in range(1, 6):
        mean = exact_moments(BassilySmith(mat), [v], 0.7).mean
        assert np.allclose(mean, mat.column(v - 1), atol=1e-12)


def test_bs_exact_ratio():
    mat = FrequencyMatrix(RANDOM_PROJECTION, 16, 8, seed=11)
    grid = [(v,) for v in range(1, 9)]
    for eps in (0.1, 1.0, 4.0):
        assert max_ldp_ratio(BassilySmith(mat), grid, eps).ratio <= math.exp(eps) + 1e-9


@pytest.mark.parametrize("kind", [ORTHOGONAL, RANDOM_PROJECTION])
def test_estimator_exactly_unbiased(kind):
    k, eps = 4, 0.9
    mat = build_orthogonal(k) if kind == ORTHOGONAL else FrequencyMatrix(RANDOM_PROJECTION, 8, k, seed=2)
    freqs = np.array([0.4, 0.3, 0.2, 0.1])
    per_value = [exact_moments(BassilySmith(mat), [v], eps).mean for v in range(1, k + 1)]
    zbar = sum(f * z for f, z in zip(freqs, per_value))
    phi = mat.entries(np.arange(mat.rows)[:, None], np.arange(k)[None, :])
    est = phi.T @ zbar
    if kind == ORTHOGONAL:
        assert np.allclose(est, freqs, atol=1e-9)
    else:
        # unbiased for the projected target Phi^T Phi f
        assert np.allclose(est, phi.T @ phi @ freqs, atol=1e-9)


def test_estimate_all_one_value():
    mat = build_orthogonal(4)
    n = 100_000
    s, alpha = bs_perturb_batch(np.ones(n, dtype=int), mat, 2.0, RandomSource(3))
    est = estimate_frequencies_batch(s, alpha, mat)
    assert 0.9 <= est[0] <= 1.1
    assert np.all(np.abs(est[1:]) <= 0.1)


def test_noise_free_reports_give_indicator():
    mat = build_orthogonal(4)
    # z = column 2 exactly, spread as one report per row scaled by rows
    from ldpkit.mech_categorical import estimate_from_zsum

    z = mat.column(1) * mat.rows
    est = estimate_from_zsum(z, mat.rows, mat)
    assert np.allclose(est, [0, 1, 0, 0], atol=1e-12)


def test_known_distribution_error():
    k, n, eps = 3, 100_000, 1.0
    freqs = np.array([0.5, 0.3, 0.2])
    root = RandomSource(5)
    errs = []
    for trial in range(50):
        rng = root.spawn(trial)
        values = rng.choice(k, freqs, size=n) + 1
        truth = np.bincount(values - 1, minlength=k) / n
        mat = build_matrix(k, n, eps, seed=trial)
        s, alpha = bs_perturb_batch(values, mat, eps, rng)
        errs.append(np.max(np.abs(estimate_frequencies_batch(s, alpha, mat) - truth)))
    assert np.median(errs) <= 0.05


def test_estimate_frequencies_reports_api():
    mat = build_orthogonal(3)
    rng = RandomSource(0)
    reports = [bs_perturb(v, mat, 1.0, rng) for v in [1, 2, 3, 1]]
    est = estimate_frequencies(reports, mat)
    assert est.shape == (3,)
    with pytest.raises(EmptyInput):
        estimate_frequencies([], mat)


def test_sum_of_frequencies_converges():
    mat = build_orthogonal(4)
    gaps = []
    for n in (10_000, 160_000):
        values = RandomSource(n).choice(4, [0.1, 0.2, 0.3, 0.4], size=n) + 1
        devs = []
        for t in range(20):
            s, alpha = bs_perturb_batch(values, mat, 1.0, RandomSource(n + t))
            devs.append(abs(estimate_frequencies_batch(s, alpha, mat).sum() - 1))
        gaps.append(np.median(devs))
    assert gaps[1] < gaps[0] / 2


def test_clip_and_renormalize():
    out = clip_and_renormalize(np.array([0.6, -0.2, 0.6]))
    assert np.all(out >= 0) and out.sum() == pytest.approx(1.0)


def test_bs_domain():
    with pytest.raises(DomainViolation):
        bs_perturb(5, build_orthogonal(4), 1.0, RandomSource(0))
