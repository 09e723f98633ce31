"""Desk-scale versions of the leakage and cost experiments.

Each function builds a fresh in-memory store from a seed, drives a
workload through it at one query per batch, and returns plain numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import MemoryBackend
from .config import make_rng
from .crypto import KeyPair
from .dynamize import BinomialLevels
from .leakage import (ideal_trace, ror_distinguish, rsd, three_key_chain, transition_matrix,
                      uniform_ranges, uniformity_test, zipf_weights)
from .pool import WeightPolicy
from .proxy import KVStore, RangeStore
from .rangestore import bucket_span


@dataclass
class KVRun:
    trace: list
    universe: list
    latencies: list
    matrix: np.ndarray = field(repr=False, default=None)

    @property
    def rsd(self) -> float:
        return rsd(self.matrix)

    @property
    def mean_latency(self) -> float:
        return float(np.mean(self.latencies))


def kv_store(pi, seed: int, theta: int, policy="constant", batch_size: int = 3, fifo=False,
             backend=None, value_len: int = 8, **kw) -> KVStore:
    if isinstance(policy, str):
        policy = WeightPolicy.parse(policy)
    values = [i.to_bytes(value_len, "little") for i in range(len(pi))]
    return KVStore(values, pi=pi, value_len=value_len, rng=make_rng(seed, "proxy"),
                   keys=KeyPair.from_seed(seed), theta=theta, policy=policy,
                   batch_size=batch_size, fifo=fifo, backend=backend, **kw)


def run_point_queries(store: KVStore, queries, load: float = 1.0) -> KVRun:
    """Client reads arriving at ``load`` per batch; returns the server's read trace."""
    tickets = []
    credit = 0.0
    for key in queries:
        tickets.append(store.get(int(key)))
        credit += 1.0 / load
        while credit >= 1.0 - 1e-9:
            store.tick()
            credit -= 1.0
    store.run_until_idle()
    universe = store.levels[0].labels
    trace = store.backend.trace.labels("read")
    return KVRun(trace, universe, [t.latency for t in tickets],
                 transition_matrix(trace, universe))


def markov_run(theta: int, n_queries: int = 100_000, seed: int = 0, policy="constant",
               fifo=False, independent=False, batch_size: int = 3, load: float = 1.0,
               **kw) -> KVRun:
    """Three-key correlated workload (or i.i.d. draws from its stationary law)."""
    chain = three_key_chain()
    pi = chain.stationary()
    wrng = make_rng(seed, "workload")
    if independent:
        queries = wrng.choice(len(pi), size=n_queries, p=pi)
    else:
        queries = chain.walk(n_queries, wrng)
    store = kv_store(pi, seed, theta, policy, batch_size, fifo, **kw)
    return run_point_queries(store, queries, load)


def zipf_run(n_keys: int, n_queries: int, seed: int = 0, theta: int = 5, s: float = 1.1) -> KVRun:
    pi = zipf_weights(n_keys, s)
    queries = make_rng(seed, "workload").choice(n_keys, size=n_queries, p=pi)
    return run_point_queries(kv_store(pi, seed, theta), queries)


def range_store(n: int, domain: int, z: int, seed: int, theta: int = 5, batch_size: int = 3,
                k: int = 1, value_len: int = 8, backend=None, **kw) -> RangeStore:
    rng = make_rng(seed, "data")
    keys = np.sort(rng.choice(np.arange(1, domain + 1), size=n, replace=False))
    values = [int(x).to_bytes(value_len, "little") for x in keys]
    store = RangeStore(z=z, value_len=value_len, domain=domain, k=k, rng=make_rng(seed, "proxy"),
                       merge_rng=make_rng(seed, "merge"), keys=KeyPair.from_seed(seed),
                       theta=theta, batch_size=batch_size,
                       backend=backend if backend is not None else MemoryBackend(), **kw)
    store.load(keys, values)
    return store


def range_run(store: RangeStore, n_queries: int, seed: int = 0, ranges=None, load: float = 1.0) -> list:
    """Uniform random range queries at ``load`` per batch; returns the tickets."""
    if ranges is None:
        ranges = uniform_ranges(store.domain, n_queries, make_rng(seed, "ranges"))
    tickets = []
    credit = 0.0
    for l, r in ranges:
        tickets.append(store.query(int(l), int(r)))
        credit += 1.0 / load
        while credit >= 1.0 - 1e-9:
            store.tick()
            credit -= 1.0
    store.run_until_idle()
    return tickets


def direct_access_trace(tags, ranges, limit: int | None = None) -> list:
    """Bucket indices fetched when every query reads its covering buckets directly.

    This is the unsmoothed baseline: one label per bucket, no replicas, no
    fakes, no pool.
    """
    out = []
    for l, r in ranges:
        b_l, b_r = bucket_span(tags, int(l), int(r))
        out.extend(range(b_l, b_r + 1))
        if limit is not None and len(out) >= limit:
            return out[:limit]
    return out


@dataclass
class RorResult:
    slots: int
    smoothed: tuple          # (p_freq, p_pairs) for the smoothed trace
    control: tuple           # same for direct access
    uniformity: tuple


def ror_experiment(n: int = 8192, z: int = 64, batch_size: int = 16, load: float = 0.3,
                   slots: int = 200_000, seed: int = 0, theta: int = 5) -> RorResult:
    """Smoothed range store and its direct-access control against uniform ideal traces."""
    st = range_store(n=n, domain=1 << 20, z=z, seed=seed, theta=theta, batch_size=batch_size, k=1)
    nq = int(slots / batch_size * load) + 50
    ranges = uniform_ranges(st.domain, nq, make_rng(seed, "ranges"))
    range_run(st, nq, ranges=ranges, load=load)
    level = next(iter(st.levels.values()))
    trace = st.backend.trace.labels("read")[:slots]
    ideal = ideal_trace(level.labels, len(trace), make_rng(seed, "ideal"))
    smoothed = ror_distinguish(trace, ideal, level.labels)

    buckets = list(range(len(level.tags)))
    more = uniform_ranges(st.domain, 4 * nq, make_rng(seed, "control"))
    ctrl = direct_access_trace(level.tags, more, slots)
    control = ror_distinguish(ctrl, ideal_trace(buckets, len(ctrl), make_rng(seed, "ideal-control")),
                              buckets)
    return RorResult(len(trace), smoothed, control, uniformity_test(trace, level.labels))


def slot_uniformity(run: KVRun) -> tuple:
    return uniformity_test(run.trace, run.universe)


def write_overhead(k: int, n_units: int, z: int = 1) -> int:
    """Records rewritten by rebuilds over ``n_units`` bucket-unit inserts."""
    levels = BinomialLevels(k)
    return sum(levels.advance(z).touched_records for _ in range(n_units))
