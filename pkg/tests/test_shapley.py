from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from infovalue.oos.window import WindowPlan
from infovalue.shapley import (
    BudgetExhausted,
    ShapleyAttribution,
    TopicSet,
    ValueCache,
    scale_by_length,
    shapley_exact,
    shapley_montecarlo,
    shapley_weights,
    topic_r2_value_function,
)

FIXTURE = {0: 0.0, 0b01: 0.3, 0b10: 0.1, 0b11: 0.5}


def two_topic(s: TopicSet) -> float:
    # topics are ids 0 and 1
    return FIXTURE[s.mask]


def random_game(n, seed):
    rng = np.random.default_rng(seed)
    table = rng.standard_normal(1 << n)
    return lambda s: float(table[s.mask])


def brute_force(value_fn, n):
    """Average marginal gains over every ordering."""
    phi = np.zeros(n)
    orders = list(itertools.permutations(range(n)))
    for order in orders:
        m = 0
        for p in order:
            phi[p] += value_fn(TopicSet(m | 1 << p)) - value_fn(TopicSet(m))
            m |= 1 << p
    return phi / len(orders)


def test_topicset_basics():
    s = TopicSet.of([0, 3, 5])
    assert s.mask == 0b101001 and len(s) == 3
    assert 3 in s and 2 not in s
    assert s.without(3) == TopicSet.of([0, 5])
    assert (TopicSet.of([1]) | TopicSet.of([2])).topics == (1, 2)
    with pytest.raises(ValueError):
        TopicSet.of([-1])
    with pytest.raises(ValueError):
        TopicSet(-1)


def test_two_topic_fixture():
    attr = shapley_exact(two_topic, [0, 1])
    assert_allclose(attr.phi, [0.35, 0.15], rtol=0, atol=1e-15)
    assert attr.total == 0.5
    assert attr.as_dict() == pytest.approx({0: 0.35, 1: 0.15})


def test_weights_sum_to_one_per_player():
    for n in (1, 2, 5, 17):
        w = shapley_weights(n)
        counts = np.array([math.comb(n - 1, s) for s in range(n)])
        assert counts @ w == pytest.approx(1.0, rel=1e-12)
    assert_allclose(shapley_weights(3), [1 / 3, 1 / 6, 1 / 3], rtol=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_exact_matches_permutation_oracle(n):
    v = random_game(n, n)
    assert_allclose(shapley_exact(v, range(n)).phi, brute_force(v, n), rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10**6))
def test_efficiency(n, seed):
    v = random_game(n, seed)
    attr = shapley_exact(v, range(n))
    total = v(TopicSet((1 << n) - 1)) - v(TopicSet(0))
    assert attr.total == total
    assert math.isclose(attr.phi.sum(), total, rel_tol=1e-10, abs_tol=1e-12)


def test_null_player_and_symmetry():
    # topic 2 never changes the value; topics 0 and 1 are interchangeable
    def v(s):
        a, b = 0 in s, 1 in s
        return 0.2 * (a + b) + 0.1 * (a and b)

    attr = shapley_exact(v, [0, 1, 2])
    assert attr.phi[2] == 0.0
    assert attr.phi[0] == attr.phi[1]


def test_linearity():
    n = 4
    v1, v2 = random_game(n, 10), random_game(n, 11)
    comb = lambda s: 2.0 * v1(s) - 0.5 * v2(s)
    lhs = shapley_exact(comb, range(n)).phi
    rhs = 2.0 * shapley_exact(v1, range(n)).phi - 0.5 * shapley_exact(v2, range(n)).phi
    assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_exact_evaluates_every_subset_once():
    calls = []
    cache = ValueCache(lambda s: calls.append(s.mask) or float(len(s)))
    shapley_exact(cache, [1, 4, 6, 9], threads=3)
    assert len(calls) == 16 == len(set(calls)) == cache.evaluations


def test_non_contiguous_topic_ids():
    v = lambda s: 0.3 * (4 in s) + 0.1 * (7 in s) + 0.1 * (4 in s and 7 in s)
    attr = shapley_exact(v, TopicSet.of([4, 7]))
    assert attr.topics == (4, 7)
    assert_allclose(attr.phi, [0.35, 0.15], atol=1e-15)


def test_non_finite_value_raises():
    with pytest.raises(ValueError, match="returned"):
        shapley_exact(lambda s: math.nan if len(s) == 2 else 0.0, [0, 1])


def test_too_many_topics():
    with pytest.raises(ValueError, match="outside"):
        shapley_exact(lambda s: 0.0, range(21))
    with pytest.raises(ValueError):
        shapley_exact(lambda s: 0.0, [])


def test_montecarlo_additive_game_is_exact():
    c = np.array([0.4, -0.1, 0.25])
    v = lambda s: float(sum(c[t] for t in s.topics))
    for seed in (0, 1, 99):
        attr = shapley_montecarlo(v, range(3), 50, seed=seed)
        assert_allclose(attr.phi, c, atol=1e-15)
        assert_allclose(attr.stderr, 0.0, atol=1e-15)


def test_montecarlo_fixture_within_three_stderr():
    attr = shapley_montecarlo(two_topic, [0, 1], 10_000, seed=3)
    assert np.all(np.abs(attr.phi - [0.35, 0.15]) <= 3 * attr.stderr)
    assert attr.phi.sum() == pytest.approx(0.5, abs=1e-15)


def test_montecarlo_deterministic_and_efficient():
    v = random_game(6, 5)
    a = shapley_montecarlo(v, range(6), 200, seed=8)
    b = shapley_montecarlo(v, range(6), 200, seed=8, threads=4)
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.stderr, b.stderr)
    assert a.phi.sum() == pytest.approx(a.total, rel=1e-12)
    with pytest.raises(ValueError):
        shapley_montecarlo(v, range(6), 1)


def test_scale_by_length():
    attr = ShapleyAttribution((1, 2), np.array([0.3, 0.1]), 0.4)
    out = scale_by_length(attr, {1: 3, 2: 1})
    assert_allclose(out.phi, [0.2, 0.2], rtol=1e-15)
    same = scale_by_length(attr, {1: 5, 2: 5})
    assert_allclose(same.phi, attr.phi, rtol=1e-15)
    one = ShapleyAttribution((3,), np.array([0.25]), 0.25)
    assert scale_by_length(one, {3: 17}).phi[0] == pytest.approx(0.25, rel=1e-15)
    with pytest.raises(ValueError):
        scale_by_length(attr, {1: 0, 2: 1})
    with pytest.raises(ValueError):
        scale_by_length(attr, {1: 3})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8), st.integers(0, 1000))
def test_scale_preserves_sum(phis, seed):
    lens = np.random.default_rng(seed).integers(1, 50, len(phis))
    attr = ShapleyAttribution(tuple(range(len(phis))), np.array(phis), sum(phis))
    out = scale_by_length(attr, dict(enumerate(lens.tolist())))
    assert math.isclose(out.phi.sum(), sum(phis), rel_tol=1e-10)


# -- cache file -----------------------------------------------------------


def test_cache_resume_skips_known_subsets(tmp_path):
    path = tmp_path / "cache.txt"
    first = ValueCache(two_topic, path, max_evaluations=2)
    with pytest.raises(BudgetExhausted, match="resume"):
        shapley_exact(first, [0, 1])
    assert len(path.read_text().splitlines()) == 2
    calls = []
    second = ValueCache(lambda s: calls.append(s.mask) or two_topic(s), path)
    attr = shapley_exact(second, [0, 1])
    assert len(calls) == 2 and second.evaluations == 2
    assert_allclose(attr.phi, [0.35, 0.15], atol=1e-15)
    # a third run is served entirely from the file
    third = ValueCache(lambda s: pytest.fail("value function called"), path)
    assert_allclose(shapley_exact(third, [0, 1]).phi, attr.phi, rtol=0, atol=0)


def test_cache_drops_truncated_last_line(tmp_path):
    path = tmp_path / "cache.txt"
    path.write_text("0,0.0\n1,0.3\n3,0.4")  # last write cut short, no newline
    cache = ValueCache(two_topic, path)
    assert cache.cached() == {0: 0.0, 1: 0.3}
    assert path.read_text() == "0,0.0\n1,0.3\n"
    assert cache(TopicSet(3)) == 0.5


def test_cache_rejects_malformed_lines(tmp_path):
    path = tmp_path / "cache.txt"
    path.write_text("0,0.0\nbogus\n1,0.3\n")
    with pytest.raises(ValueError, match="line 2"):
        ValueCache(two_topic, path)


def test_cache_values_round_trip_exactly(tmp_path):
    path = tmp_path / "cache.txt"
    x = 0.1 + 0.2
    ValueCache(lambda s: x, path)(TopicSet(5))
    assert ValueCache(lambda s: 0.0, path).cached() == {5: x}


def test_topic_value_function_on_bundle(small_dataset):
    bundle = small_dataset.bundle
    plan = WindowPlan((2015, 2016))
    v = ValueCache(topic_r2_value_function(bundle, plan))
    attr = shapley_exact(v, [0, 1, 2])
    assert v.evaluations == 8
    assert math.isclose(attr.phi.sum(), attr.total, rel_tol=1e-10, abs_tol=1e-14)
    assert v(TopicSet(0)) <= 0.001  # zero embedding only forecasts the training mean
    assert attr.total > 0
