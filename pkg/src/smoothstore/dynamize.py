"""k-binomial dynamization of a static bucketized store.

After ``t`` bucket-sized insertions the data lives in ``k`` components of
``C(D[i], i+1)`` bucket-units each, where ``D`` is the unique
combinatorial-number-system decomposition of ``t``.  Each insertion bumps
``D[0]`` and cascades: a component whose count collides with the next one
is destroyed and its records are merged upward.  Merges run through the
differentially oblivious k-way merge, so only the noisy bin interleaving
of each merge is visible.

Component ``k-1`` holds the oldest data and component 0 the newest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domerge import k_way_do_merge_keys, merge_rounds
from .rangestore import FLAG_TOMBSTONE, MAX_KEY, MAX_SEQ, ConfigurationError, is_real, make_records

INF = math.inf


def decompose_oracle(t: int, k: int) -> tuple:
    """Greedy decomposition ``t = sum_i C(D[i], i+1)`` with ``D`` strictly increasing."""
    if t < 0 or k < 1:
        raise ValueError("need t >= 0 and k >= 1")
    out = [0] * k
    rest = t
    upper = None
    for i in range(k - 1, -1, -1):
        # largest d below the previous digit with C(d, i+1) <= rest
        d = i
        while (upper is None or d + 1 < upper) and math.comb(d + 1, i + 1) <= rest:
            d += 1
        out[i] = d
        rest -= math.comb(d, i + 1)
        upper = d
    return tuple(out)


def level_units(D) -> list:
    """Bucket-units held by each component."""
    return [math.comb(d, i + 1) for i, d in enumerate(D)]


@dataclass
class RebuildEvent:
    destroyed: list          # component indices absorbed into the merge
    new_level: int
    units: int               # bucket-units in the new component
    touched_records: int     # Z * (units of destroyed levels + 1)


class BinomialLevels:
    """The ``D`` bookkeeping only; no data."""

    def __init__(self, k: int):
        if k < 1:
            raise ConfigurationError("k must be at least 1")
        self.k = k
        self.D = list(range(k)) + [INF]
        self.t = 0

    @property
    def digits(self) -> tuple:
        return tuple(self.D[:self.k])

    def units(self) -> list:
        return level_units(self.digits)

    def live_levels(self) -> list:
        return [i for i, u in enumerate(self.units()) if u > 0]

    def plan(self) -> tuple:
        """Simulate one insertion: ``(destroyed levels, new level, new D)``."""
        D = list(self.D)
        i = 0
        D[0] += 1
        destroyed = []
        while D[i] == D[i + 1]:
            destroyed.append(i)
            D[i + 1] += 1
            D[i] = i
            i += 1
        destroyed.append(i)
        return destroyed, i, D

    def advance(self, z: int = 1) -> RebuildEvent:
        before = self.units()
        destroyed, new, D = self.plan()
        self.D = D
        self.t += 1
        old_units = sum(before[i] for i in destroyed)
        return RebuildEvent(destroyed, new, self.units()[new], z * (old_units + 1))


class InsertBuffer:
    """Proxy-side buffer that releases one sorted bucket-unit per ``Z`` records."""

    def __init__(self, z: int, value_len: int):
        self.z = z
        self.value_len = value_len
        self.keys, self.values, self.seqs, self.tomb = [], [], [], []

    def __len__(self):
        return len(self.keys)

    def add(self, key: int, value: bytes, seq: int, tombstone: bool = False):
        """Buffer one record; returns the flushed sorted unit when full, else None."""
        if not (1 <= key <= MAX_KEY):
            raise ValueError(f"key {key} outside [1, {MAX_KEY}]")
        self.keys.append(key)
        self.values.append(value)
        self.seqs.append(seq)
        self.tomb.append(tombstone)
        if len(self.keys) >= self.z:
            return self.flush()
        return None

    def records(self) -> np.ndarray:
        recs = make_records(self.keys, self.values, self.seqs, self.tomb, self.value_len)
        return recs[np.lexsort((recs["seq"], recs["key"]))]

    def flush(self) -> np.ndarray:
        out = self.records()
        self.keys, self.values, self.seqs, self.tomb = [], [], [], []
        return out


def merge_key(records: np.ndarray) -> np.ndarray:
    """int64 sort key ``key << 32 | seq``; orders by key then age."""
    keys = records["key"].astype(np.int64)
    seqs = records["seq"].astype(np.int64)
    if len(keys) and (keys.max() > MAX_KEY or seqs.max() > MAX_SEQ):
        raise ValueError("key or seq too large for the merge key")
    return (keys << 32) | seqs


def merge_records(arrays, xi: int, eps: float, rng: np.random.Generator, stats=None) -> np.ndarray:
    """Iterative pairwise DO-merge of sorted record arrays."""
    arrays = [a[is_real(a)] for a in arrays]
    if not arrays:
        raise ValueError("nothing to merge")
    recs = np.concatenate(arrays)
    bounds = np.cumsum([0] + [len(a) for a in arrays])
    key = merge_key(recs)
    groups = [np.arange(bounds[i], bounds[i + 1]) for i in range(len(arrays))]
    order = k_way_do_merge_keys([key[g] for g in groups], groups, xi, eps, rng, stats)
    return recs[order]


def purge(records: np.ndarray, watermark: int = MAX_SEQ + 1, keep_tombstones: bool = False) -> np.ndarray:
    """Drop versions no reader can still need.

    Every reader sees the records with ``seq < watermark``.  ``records`` is
    sorted by (key, seq).  A version is dropped when a newer version of the
    same key is below the watermark.  A surviving tombstone is dropped too, unless
    ``keep_tombstones`` (older components might still hold the key) or a
    pending query predates it.
    """
    if len(records) == 0:
        return records
    keys, seqs = records["key"], records["seq"]
    same_next = np.zeros(len(records), dtype=bool)
    same_next[:-1] = keys[1:] == keys[:-1]
    next_seq = np.zeros(len(records), dtype=np.uint64)
    next_seq[:-1] = seqs[1:]
    superseded = same_next & (next_seq < watermark)
    keep = ~superseded
    if not keep_tombstones:
        tomb = (records["flags"] & FLAG_TOMBSTONE) != 0
        keep &= ~(tomb & ~same_next & (seqs < watermark))
    return records[keep]


def privacy_per_rebuild(eps: float, n_arrays: int) -> float:
    """Privacy loss charged to one rebuild: each record sits in ceil(log2 k) merges."""
    return eps * merge_rounds(n_arrays)

