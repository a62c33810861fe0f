import math

import numpy as np
import pytest

from ldpkit.audit import (
    MAX_OUTCOMES,
    BassilySmith,
    Duchi,
    MultiAttribute,
    OneBit,
    RandomizedResponse,
    corner_grid,
    default_grid,
    enumerate_distribution,
    exact_moments,
    lattice_grid,
    make_mechanism,
    max_ldp_ratio,
    monte_carlo_check,
    schema_grid,
)
from ldpkit.core import CATEGORICAL, NUMERIC, AttributeSpec, EmptyInput, RandomSource, Schema, TooLarge
from ldpkit.mech_categorical import RANDOM_PROJECTION, FrequencyMatrix, build_orthogonal, rr_binary_perturb_batch
from ldpkit.mech_numeric import FIXED, ORIGINAL, duchi_perturb_batch, harmony_numeric_perturb_batch


def c_eps(eps):
    return (math.exp(eps) + 1) / (math.exp(eps) - 1)


def test_onebit_ln3_example():
    dist = enumerate_distribution(OneBit(1), (1.0,), math.log(3))
    assert dist.as_dict() == pytest.approx({(1, 1): 0.75, (1, -1): 0.25})


def test_onebit_symmetric_input():
    dist = enumerate_distribution(OneBit(2), (0.0, 0.0), 1.0)
    assert len(dist) == 4
    assert np.allclose(dist.probs, 0.25, atol=1e-15)


def test_duchi_original_example_probabilities():
    eps = 0.5
    table = enumerate_distribution(Duchi(2, ORIGINAL), (1.0, 1.0), eps).as_dict()
    assert table[(1, 1)] == pytest.approx(math.exp(eps) / (math.exp(eps) + 1), rel=1e-14)
    assert table[(-1, -1)] == pytest.approx(1 / (3 * math.exp(eps) + 3), rel=1e-14)


@pytest.mark.parametrize("d", [1, 2])
def test_onebit_corner_ratio_exact(d):
    res = max_ldp_ratio(OneBit(d), corner_grid(d), 0.9)
    assert res.ratio == pytest.approx(math.exp(0.9), rel=1e-12)
    assert res.passes()


def test_duchi_original_counterexample_witness():
    for eps in (0.5, 1.0):
        res = max_ldp_ratio(Duchi(2, ORIGINAL), [(1.0, 1.0), (-1.0, -1.0)], eps)
        assert abs(res.ratio - 3 * math.exp(eps)) <= 1e-9
        assert tuple(res.output) == (1, 1)
        assert res.witness == ((1.0, 1.0), (-1.0, -1.0))
        assert not res.passes()


def test_duchi_fixed_corner_grid():
    for eps in (0.1, 1.0, 4.0):
        assert max_ldp_ratio(Duchi(2, FIXED), corner_grid(2), eps).passes()


def test_corners_are_extremal_under_refinement():
    fine = lattice_grid(2, np.linspace(-1, 1, 9))
    for mech in (OneBit(2), Duchi(2, FIXED)):
        coarse = max_ldp_ratio(mech, corner_grid(2), 1.0).ratio
        assert max_ldp_ratio(mech, fine, 1.0).ratio <= coarse + 1e-12


def test_variance_example():
    m = exact_moments(OneBit(2), (0.0, 0.0), 1.0)
    assert np.allclose(m.variance, 2 * c_eps(1.0) ** 2, rtol=1e-12)
    assert np.allclose(m.mean, 0.0, atol=1e-15)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_onebit_variance_bound(d):
    for eps in (0.1, 1.0, 4.0):
        bound = d * c_eps(eps) ** 2
        for t in lattice_grid(d, (-1.0, 0.0, 1.0)):
            assert np.all(exact_moments(OneBit(d), t, eps).variance <= bound + 1e-9)


def test_total_mass():
    schema = Schema((AttributeSpec("x", NUMERIC), AttributeSpec("c", CATEGORICAL, k=3)))
    mechs = [
        (OneBit(3), (0.2, -0.5, 1.0)),
        (Duchi(4, FIXED), (0.1, 0.2, -0.3, 0.9)),
        (Duchi(3, ORIGINAL), (1.0, 0.0, -1.0)),
        (RandomizedResponse(), (-1,)),
        (BassilySmith(FrequencyMatrix(RANDOM_PROJECTION, 10, 5, seed=1)), (4,)),
        (MultiAttribute(schema, {1: build_orthogonal(3)}), (0.3, 2)),
    ]
    for mech, t in mechs:
        for eps in (0.1, 2.0):
            dist = enumerate_distribution(mech, t, eps)
            assert abs(dist.total_mass - 1.0) <= 1e-12
            assert np.all(dist.probs >= 0)


def test_too_large():
    assert Duchi(20, FIXED).size() > MAX_OUTCOMES
    with pytest.raises(TooLarge):
        enumerate_distribution(Duchi(20, FIXED), np.zeros(20), 1.0)
    with pytest.raises(TooLarge):
        max_ldp_ratio(Duchi(21, ORIGINAL), [np.zeros(21)], 1.0)
    with pytest.raises(EmptyInput):
        max_ldp_ratio(OneBit(2), [], 1.0)


def _counts(dist, keys):
    index = {tuple(lab) if isinstance(lab, tuple) else lab: i for i, lab in enumerate(dist.labels)}
    out = np.zeros(len(dist.labels))
    uniq, cnt = np.unique(keys, axis=0, return_counts=True)
    for key, c in zip(uniq, cnt):
        lab = tuple(int(v) for v in np.atleast_1d(key))
        out[index[lab if len(lab) > 1 else lab[0]]] = c
    return out


def test_monte_carlo_onebit():
    n, t, eps = 1_000_000, (0.5, -1.0, 0.25), 0.8
    j, s = harmony_numeric_perturb_batch(np.tile(t, (n, 1)), eps, RandomSource(11))
    dist = enumerate_distribution(OneBit(3), t, eps)
    keys = np.column_stack([j + 1, s])
    assert monte_carlo_check(dist, _counts(dist, keys))


def test_monte_carlo_duchi():
    n, t, eps = 1_000_000, (0.3, -0.6, 0.9), 1.0
    out = duchi_perturb_batch(np.tile(t, (n, 1)), eps, FIXED, RandomSource(12))
    dist = enumerate_distribution(Duchi(3, FIXED), t, eps)
    assert monte_carlo_check(dist, _counts(dist, np.sign(out).astype(int)))


def test_monte_carlo_rr():
    n = 1_000_000
    out = rr_binary_perturb_batch(np.ones(n), 1.0, RandomSource(13))
    dist = enumerate_distribution(RandomizedResponse(), (1,), 1.0)
    counts = np.array([np.sum(np.sign(out) == lab) for lab in dist.labels], dtype=float)
    assert monte_carlo_check(dist, counts)


def test_monte_carlo_check_rejects_wrong_counts():
    dist = enumerate_distribution(OneBit(1), (1.0,), math.log(3))
    assert monte_carlo_check(dist, np.array([750_000.0, 250_000.0]))
    assert not monte_carlo_check(dist, np.array([500_000.0, 500_000.0]))


def test_make_mechanism_and_default_grid():
    assert isinstance(make_mechanism("onebit", d=3), OneBit)
    assert make_mechanism("duchi_original", d=2).variant == ORIGINAL
    assert make_mechanism("bs", k=6).matrix.rows == 8
    assert make_mechanism("bs", k=6, rows=12, seed=2).matrix.rows == 12
    assert len(default_grid(OneBit(2))) == 25
    schema = Schema((AttributeSpec("x", NUMERIC), AttributeSpec("c", CATEGORICAL, k=2)))
    assert len(default_grid(make_mechanism("multi", schema=schema))) == 10
    assert schema_grid(schema)[0] == (-1.0, 1)
    with pytest.raises(ValueError):
        make_mechanism("nope")
