"""Variance test, growth rule and index draws for the dynamic sampler."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tvbilevel.sampling import (
    GrowthDecision,
    SampleState,
    condition_holds,
    draw_sample,
    next_size,
    variance_estimate,
)


def random_case(rng):
    n_total = int(rng.integers(2, 60))
    m = int(rng.integers(2, n_total + 1))
    d = int(rng.integers(1, 3))
    grads = rng.standard_normal((m, d)) * 10.0 ** rng.integers(-3, 3)
    theta = float(rng.uniform(0.05, 1.5))
    return n_total, m, grads, theta


def test_variance_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = int(rng.integers(2, 12))
        d = int(rng.integers(1, 4))
        grads = rng.standard_normal((m, d))
        got = variance_estimate(grads)
        want = oracles.sample_variance(list(grads))
        assert np.allclose(got, want, rtol=1e-12)


def test_variance_needs_two_samples():
    with pytest.raises(ValueError):
        variance_estimate(np.ones((1, 2)))


def test_condition_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(500):
        n_total, m, grads, theta = random_case(rng)
        var = variance_estimate(grads)
        grad = grads.mean(axis=0)
        got = condition_holds(var, grad, m, n_total, theta)
        want = oracles.growth_condition(var, grad, m, n_total, theta)
        assert got == want


def test_next_size_matches_brute_force_scan():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(2000):
        n_total, m, grads, theta = random_case(rng)
        var = variance_estimate(grads)
        grad = grads.mean(axis=0)
        if condition_holds(var, grad, m, n_total, theta):
            continue
        got = next_size(var, grad, m, n_total, theta)
        want = oracles.brute_force_next_size(var, grad, m, n_total, theta)
        assert got == want
        checked += 1
    assert checked > 200


@settings(max_examples=200, deadline=None)
@given(
    n_total=st.integers(2, 200),
    current=st.integers(1, 199),
    v=st.floats(1e-8, 1e6),
    g2=st.floats(0.0, 1e6),
    theta=st.floats(0.01, 4.0),
)
def test_next_size_bounds(n_total, current, v, g2, theta):
    current = min(current, n_total - 1)
    var = np.array([v])
    grad = np.array([np.sqrt(g2)])
    s = next_size(var, grad, current, n_total, theta)
    assert current < s <= n_total
    assert oracles.growth_condition(var, grad, s, n_total, theta) or s == n_total


def test_full_batch_always_passes():
    assert condition_holds(np.array([1e9]), np.zeros(1), 7, 7, 0.01)
    assert condition_holds(np.array([1e9]), np.zeros(1), 1, 1, 0.01)


def test_zero_gradient_forces_full_batch():
    var = np.array([2.0])
    grad = np.zeros(1)
    assert not condition_holds(var, grad, 3, 10, 0.5)
    assert next_size(var, grad, 3, 10, 0.5) == 10


def test_zero_variance_passes():
    assert condition_holds(np.zeros(2), np.array([0.1, 0.0]), 2, 50, 0.1)


def test_theta_must_be_positive():
    with pytest.raises(ValueError):
        condition_holds(np.ones(1), np.ones(1), 2, 5, 0.0)
    with pytest.raises(ValueError):
        next_size(np.ones(1), np.ones(1), 2, 5, -1.0)


def test_draw_sample_properties():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n_total = int(rng.integers(1, 40))
        size = int(rng.integers(1, n_total + 1))
        picked = draw_sample(rng, n_total, size)
        assert picked.size == size
        assert np.all(np.diff(picked) > 0)
        assert picked.min() >= 0 and picked.max() < n_total


def test_draw_sample_rejects_bad_sizes():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        draw_sample(rng, 5, 0)
    with pytest.raises(ValueError):
        draw_sample(rng, 5, 6)


def test_fresh_policy_redraws():
    state = SampleState(30, 5, seed=11)
    draws = [tuple(state.draw()) for _ in range(6)]
    assert len(set(draws)) > 1
    assert all(len(s) == 5 for s in draws)


def test_same_seed_same_sequence():
    a = SampleState(30, 5, seed=42)
    b = SampleState(30, 5, seed=42)
    for _ in range(4):
        assert np.array_equal(a.draw(), b.draw())


def test_nested_policy_keeps_previous_indices():
    state = SampleState(25, 4, seed=7, nested=True)
    first = state.draw()
    again = state.draw()
    assert np.array_equal(first, again)
    state.grow(9)
    grown = state.draw()
    assert grown.size == 9
    assert set(first).issubset(set(grown))
    assert np.all(np.diff(grown) > 0)


def test_growth_applies_on_next_draw():
    state = SampleState(20, 3, seed=9)
    first = state.draw()
    state.grow(8)
    assert first.size == 3
    assert state.draw().size == 8


def test_grow_validation():
    state = SampleState(10, 4, seed=0)
    with pytest.raises(ValueError):
        state.grow(3)
    state.grow(50)
    assert state.size == 10


def test_evaluate_single_sample_accepts():
    state = SampleState(10, 1, seed=1)
    dec = state.evaluate(np.array([[3.0]]), np.array([3.0]), theta=0.5)
    assert dec == GrowthDecision(True, 1, 0.0, 9.0)


def test_evaluate_matches_pieces():
    rng = np.random.default_rng(5)
    state = SampleState(40, 6, seed=2)
    grads = rng.standard_normal((6, 2))
    grad = grads.mean(axis=0) / 2.0
    dec = state.evaluate(grads, grad, theta=0.2)
    var = variance_estimate(grads)
    assert dec.condition_met == condition_holds(var, grad, 6, 40, 0.2)
    assert dec.variance_l1 == pytest.approx(float(np.sum(var)), rel=1e-14)
    if not dec.condition_met:
        assert dec.proposed_size == next_size(var, grad, 6, 40, 0.2)
    else:
        assert dec.proposed_size == state.size


def test_initial_size_validation():
    with pytest.raises(ValueError):
        SampleState(5, 0, seed=0)
    with pytest.raises(ValueError):
        SampleState(5, 6, seed=0)
