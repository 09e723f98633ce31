import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothstore.pool import FifoQueue, ReplicaSampler, SamplingPool, WeightPolicy
from smoothstore.rangestore import ConfigurationError


def sampler(n=12, seed=0, probs=None):
    probs = np.full(n, 1.0 / n) if probs is None else np.asarray(probs)
    return ReplicaSampler(list(range(n)), probs, np.random.default_rng(seed))


def test_theta_zero_is_empty():
    assert len(SamplingPool(0, sampler())) == 0


def test_setup_pads_with_distinct_synthetic_items():
    p = SamplingPool(5, sampler())
    assert len(p) == 5 and len(set(p.items)) == 5
    assert all(p.synthetic)


def test_setup_presence_frequency():
    s = sampler(seed=1)
    trials = 10_000
    hits = np.zeros(12)
    for _ in range(trials):
        for rep in SamplingPool(5, s).items:
            hits[rep] += 1
    p = 5 / 12
    sigma = np.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(hits - trials * p) < 3 * sigma + 1)


def test_theta_above_support_is_rejected():
    with pytest.raises(ConfigurationError):
        SamplingPool(5, sampler(4))


def test_put_dedups():
    p = SamplingPool(0, sampler())
    assert p.put(3) and len(p) == 1
    assert not p.put(3) and len(p) == 1


def test_real_put_converts_synthetic():
    p = SamplingPool(3, sampler())
    rep = p.items[0]
    assert p.is_synthetic(rep)
    assert not p.put(rep)
    assert not p.is_synthetic(rep)


def test_single_item_get():
    p = SamplingPool(0, sampler())
    p.put(7)
    assert p.get() == (7, False)


def test_first_get_uniform_over_three():
    counts = np.zeros(3)
    rng = np.random.default_rng(2)
    s = ReplicaSampler([0, 1, 2], [1 / 3] * 3, rng)
    draws = 100_000
    for _ in range(draws):
        p = SamplingPool(0, s, rng=rng)
        for i in range(3):
            p.put(i)
        counts[p.get()[0]] += 1
    sigma = np.sqrt(draws * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - draws / 3) < 3 * sigma)


def test_get_refills_to_theta():
    p = SamplingPool(2, sampler())
    p.get()
    assert len(p) >= 2


def test_group_tracking_and_discard():
    p = SamplingPool(0, sampler(), group=lambda r: r // 4)
    for r in (0, 1, 5):
        p.put(r)
    assert p.members_of(0) == {0, 1}
    assert p.discard(lambda r: r < 4) == [0, 1]
    assert p.members_of(0) == set() and len(p) == 1


@given(st.lists(st.integers(0, 11), max_size=60), st.integers(0, 5), st.integers(0, 1000))
@settings(max_examples=60)
def test_pool_never_holds_duplicates(puts, theta, seed):
    p = SamplingPool(theta, sampler(seed=seed))
    for i, r in enumerate(puts):
        p.put(r)
        if i % 3 == 0:
            p.get()
        assert len(set(p.items)) == len(p.items)
        assert len(p) >= theta


@pytest.mark.parametrize("text", ["linear", "linear:0.5", "exponential:1.5"])
def test_weighted_release_prefers_old_items(text):
    rng = np.random.default_rng(3)
    s = ReplicaSampler(list(range(10)), [0.1] * 10, rng)
    first = 0
    for _ in range(2000):
        p = SamplingPool(0, s, WeightPolicy.parse(text), rng=rng)
        p.put(0)
        for r in range(1, 5):
            p._update_weights()
            p.put(r)
        first += p.get()[0] == 0
    assert first / 2000 > 0.3     # uniform would give 0.2


def test_release_probabilities_sum_to_one():
    p = SamplingPool(0, sampler(), WeightPolicy("linear"))
    for r in range(4):
        p.put(r)
        p._update_weights()
    probs = p.release_probabilities()
    assert probs.sum() == pytest.approx(1.0)
    assert probs[0] > probs[-1]


def test_observe_callback_sees_every_item():
    p = SamplingPool(3, sampler())
    seen = []
    p.get(observe=lambda r, w: seen.append((r, w)))
    assert len(seen) == 3 and sum(w for _, w in seen) == pytest.approx(1.0)


def test_policy_validation():
    with pytest.raises(ConfigurationError):
        WeightPolicy("quadratic")
    with pytest.raises(ConfigurationError):
        WeightPolicy("exponential", 0.5)
    with pytest.raises(ConfigurationError):
        WeightPolicy("linear", -1)
    assert WeightPolicy.parse("exponential").rate == 2.0


def test_sampler_validation():
    with pytest.raises(ConfigurationError):
        ReplicaSampler([0, 1], [0.5, 0.6], np.random.default_rng())
    with pytest.raises(ValueError):
        ReplicaSampler([0], [0.5, 0.5], np.random.default_rng())


def test_fifo_order_and_dedup():
    q = FifoQueue(sampler())
    for r in (3, 1, 3, 2):
        q.put(r)
    assert [q.get()[0] for _ in range(3)] == [3, 1, 2]
    q.put(4)
    q.put(5)
    assert q.discard(lambda r: r == 4) == [4]
    assert q.get() == (5, False)
