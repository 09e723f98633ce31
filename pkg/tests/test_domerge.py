import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothstore.domerge import (MergeStats, TruncLaplace, bin_pack, bins_needed, compute_bin_capacity, delta_for,
                                 do_merge2, failure_probability, k_way_do_merge, k_way_do_merge_keys,
                                 merge_rounds, theoretical_bin_capacity)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_zero_truncation_is_zero():
    t = TruncLaplace(scale=1.0, truncation=0)
    assert t.sample(rng()) == 0
    assert not t.sample(rng(), 100).any()


def test_tiny_scale_concentrates_at_zero():
    t = TruncLaplace(scale=1e-6, truncation=8)
    assert not t.sample(rng(), 10_000).any()


def test_trunc_laplace_pmf_matches_samples():
    t = TruncLaplace(scale=1.0, truncation=8)
    x = t.sample(rng(1), 100_000)
    pmf = np.exp(-np.abs(np.arange(-8, 9)))
    pmf /= pmf.sum()
    emp = np.array([(x == v).sum() for v in range(-8, 9)]) / len(x)
    sigma = np.sqrt(pmf * (1 - pmf) / len(x))
    assert np.all(np.abs(emp - pmf) <= 3 * sigma + 1e-12)


def test_theoretical_capacity():
    assert theoretical_bin_capacity(1, 2) == 1
    assert theoretical_bin_capacity(0.1, 512) == 590490
    assert theoretical_bin_capacity(0.5, 512) == 2 * theoretical_bin_capacity(1, 512)


def test_capacity_meets_delta_and_bound():
    r = compute_bin_capacity(512, 1.0, 512)
    assert r.failure_prob <= math.exp(-81)
    assert r.xi <= r.xi_theory
    assert failure_probability(512, r.xi - r.step, 1.0, 512) > r.delta


def test_capacity_shrinks_with_looser_delta():
    assert compute_bin_capacity(512, 1.0, 4).xi < compute_bin_capacity(512, 1.0, 512).xi


def test_capacity_monotone_in_eps():
    caps = [compute_bin_capacity(512, e, 512).xi for e in (0.1, 0.5, 1, 2)]
    assert caps == sorted(caps, reverse=True)


def test_capacity_rejects_bad_input():
    with pytest.raises(ValueError):
        compute_bin_capacity(0, 1.0, 512)
    with pytest.raises(ValueError):
        compute_bin_capacity(10, 0.0, 512)


def test_failure_probability_against_monte_carlo():
    # small setting where the failure event is common enough to sample
    z, xi, eps, lam = 40, 16, 0.5, 16
    exact = failure_probability(z, xi, eps, lam)
    noise = TruncLaplace.for_capacity(xi, eps)
    nb = bins_needed(z, xi, lam)
    sums = (xi // 2 + noise.sample(rng(2), (50_000, nb))).sum(axis=1)
    emp = (sums < z).mean()
    assert abs(emp - exact) < 4 * math.sqrt(exact * (1 - exact) / 50_000) + 1e-4


def test_delta():
    assert delta_for(512) == pytest.approx(math.exp(-81))


def test_bin_pack_empty():
    bl = bin_pack([], 8, 1.0, rng())
    assert len(bl) == 0 and len(bl.real_indices()) == 0


def test_bin_pack_zero_noise():
    m, xi = 37, 8
    bl = bin_pack(np.arange(m), xi, 1e9, rng())   # scale 1e-9 means no noise
    assert len(bl) == math.ceil(2 * m / xi)
    assert np.all(bl.loads[:-1] == xi // 2)


@given(st.lists(st.integers(0, 10_000), max_size=400), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60)
def test_bin_pack_preserves_sequence(xs, seed):
    keys = np.sort(np.array(xs, dtype=np.int64))
    bl = bin_pack(keys, 16, 1.0, rng(seed))
    assert np.array_equal(bl.real_indices(), np.arange(len(keys)))
    assert np.all((bl.loads >= 0) & (bl.loads <= 16))


def test_merge_small():
    assert do_merge2([1, 3, 5], [2, 4, 6], 4, 1.0, rng()) == [1, 2, 3, 4, 5, 6]
    assert do_merge2([1, 2, 3], [], 4, 1.0, rng()) == [1, 2, 3]
    assert do_merge2([], [], 4, 1.0, rng()) == []


@given(st.lists(st.integers(0, 300), max_size=300), st.lists(st.integers(0, 300), max_size=300),
       st.sampled_from([4, 8, 32]), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=80, deadline=None)
def test_merge_equals_oracle(a, b, xi, seed):
    a, b = sorted(a), sorted(b)
    assert do_merge2(a, b, xi, 1.0, rng(seed)) == sorted(a + b)


def test_merge_large_instance():
    r = rng(5)
    a = np.sort(r.integers(0, 10 ** 6, 4096)).tolist()
    b = np.sort(r.integers(0, 10 ** 6, 4096)).tolist()
    stats = MergeStats()
    out = do_merge2(a, b, 64, 1.0, r, stats=stats)
    assert out == sorted(a + b)
    assert stats.max_occupancy <= 6 * 64


def test_merge_with_key_carries_payload():
    a = [(1, "a"), (4, "b")]
    b = [(2, "c"), (3, "d")]
    out = do_merge2(a, b, 4, 1.0, rng(), key=lambda e: e[0])
    assert [e[1] for e in out] == ["a", "c", "d", "b"]


def test_k_way():
    assert k_way_do_merge([[4], [2], [3], [1]], 4, 1.0, rng()) == [1, 2, 3, 4]
    assert k_way_do_merge([[1, 5, 9]], 4, 1.0, rng()) == [1, 5, 9]
    assert k_way_do_merge([], 4, 1.0, rng()) == []
    r = rng(6)
    arrays = [np.sort(r.integers(0, 1000, 1250)).tolist() for _ in range(8)]
    assert k_way_do_merge(arrays, 64, 1.0, r) == sorted(sum(arrays, []))


def test_k_way_keys_and_stats():
    keys = [np.array([1, 4]), np.array([2, 3]), np.array([0])]
    payloads = [np.array([10, 40]), np.array([20, 30]), np.array([0])]
    stats = []
    out = k_way_do_merge_keys(keys, payloads, 4, 1.0, rng(), stats)
    assert out.tolist() == [0, 10, 20, 30, 40]
    assert len(stats) == 2 and all(isinstance(s, MergeStats) for s in stats)


def test_merge_rounds():
    assert [merge_rounds(k) for k in (1, 2, 3, 4, 8, 9)] == [0, 1, 2, 2, 3, 4]


def test_iteration_count_depends_only_on_lengths():
    # one iteration per bin, and bin counts depend on lengths and noise only
    a1, b1 = list(range(0, 200, 2)), list(range(1, 200, 2))
    a2, b2 = list(range(100)), list(range(100, 200))
    s1, s2 = MergeStats(), MergeStats()
    do_merge2(a1, b1, 8, 1.0, rng(9), stats=s1)
    do_merge2(a2, b2, 8, 1.0, rng(9), stats=s2)
    assert s1.iterations == s2.iterations
