"""Range queries over sorted, bucketized records.

The proxy keeps one tag ``[l, r]`` per bucket.  A range query is turned
into the contiguous span of buckets whose tags overlap it, each bucket
reply is accumulated, and once every bucket has arrived the result is
filtered back down to the requested interval.

Records are numpy structured arrays so that a bucket serializes to a fixed
number of bytes: ``Z * (17 + L)`` for the slots plus a 16-byte tag header.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field

import numpy as np

DUMMY_KEY = np.iinfo(np.uint64).max
FLAG_TOMBSTONE = 1
FLAG_DUMMY = 2
# the merge key packs (key, seq) into one int64
MAX_KEY = (1 << 31) - 1
MAX_SEQ = (1 << 32) - 1

_TAG = struct.Struct("<QQ")


class ConfigurationError(ValueError):
    """Invalid store parameters."""


def record_dtype(value_len: int) -> np.dtype:
    return np.dtype([("key", "<u8"), ("seq", "<u8"), ("flags", "u1"), ("value", "u1", (value_len,))])


def make_records(keys, values=None, seqs=None, tombstones=None, value_len: int = 8) -> np.ndarray:
    """Build a record array; ``values`` may be a list of bytes or a 2-D uint8 array."""
    keys = np.asarray(keys, dtype=np.uint64)
    n = len(keys)
    out = np.zeros(n, dtype=record_dtype(value_len))
    out["key"] = keys
    out["seq"] = np.arange(n) if seqs is None else np.asarray(seqs, dtype=np.uint64)
    if tombstones is not None:
        out["flags"] = np.where(np.asarray(tombstones, dtype=bool), FLAG_TOMBSTONE, 0)
    if values is not None:
        if isinstance(values, np.ndarray) and values.ndim == 2:
            out["value"] = values[:, :value_len]
        else:
            for i, v in enumerate(values):
                out["value"][i] = np.frombuffer(pad_value(v, value_len), dtype=np.uint8)
    return out


def pad_value(value: bytes, value_len: int) -> bytes:
    """Pad with zeros or truncate to exactly ``value_len`` bytes."""
    return bytes(value[:value_len]).ljust(value_len, b"\0")


def dummy_records(n: int, value_len: int) -> np.ndarray:
    out = np.zeros(n, dtype=record_dtype(value_len))
    out["key"] = DUMMY_KEY
    out["flags"] = FLAG_DUMMY
    return out


def is_real(records: np.ndarray) -> np.ndarray:
    return (records["flags"] & FLAG_DUMMY) == 0


def value_len_of(records: np.ndarray) -> int:
    return records.dtype["value"].shape[0]


@dataclass
class Bucket:
    tag: tuple
    records: np.ndarray

    def to_bytes(self) -> bytes:
        return _TAG.pack(int(self.tag[0]), int(self.tag[1])) + self.records.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, value_len: int) -> "Bucket":
        l, r = _TAG.unpack_from(data)
        recs = np.frombuffer(data, dtype=record_dtype(value_len), offset=_TAG.size).copy()
        return cls((l, r), recs)

    def real_records(self) -> np.ndarray:
        return self.records[is_real(self.records)]


def bucket_size_bytes(z: int, value_len: int) -> int:
    return _TAG.size + z * record_dtype(value_len).itemsize


def bucketize(records: np.ndarray, z: int):
    """Split sorted records into ``ceil(n/Z)`` dummy-padded buckets.

    Returns ``(buckets, tags)`` in logical (sorted) order.
    """
    if z <= 0:
        raise ConfigurationError("bucket size Z must be positive")
    n = len(records)
    if n and np.any(np.diff(records["key"].astype(np.int64)) < 0):
        raise ValueError("records must be sorted by key")
    nb = -(-n // z)
    padded = np.concatenate([records, dummy_records(nb * z - n, value_len_of(records))])
    buckets, tags = [], []
    for i in range(nb):
        slots = padded[i * z:(i + 1) * z]
        real = slots[is_real(slots)]
        tag = (int(real["key"][0]), int(real["key"][-1]))
        buckets.append(Bucket(tag, slots.copy()))
        tags.append(tag)
    return buckets, tags


# -- bucket access probabilities ---------------------------------------------


class CumulativeRangeDist:
    """Cumulative table ``P[x, y] = sum_{i<=x, j<=y} p[i, j]`` with a zero row/column."""

    def __init__(self, pmf: np.ndarray):
        pmf = np.asarray(pmf, dtype=float)
        n = pmf.shape[0]
        if pmf.shape != (n, n):
            raise ValueError("range pmf must be square")
        self.N = n
        self.pmf = pmf
        table = np.zeros((n + 1, n + 1))
        table[1:, 1:] = pmf.cumsum(axis=0).cumsum(axis=1)
        self.table = table

    @classmethod
    def uniform(cls, n: int) -> "CumulativeRangeDist":
        return cls(np.triu(np.full((n, n), 2.0 / (n * (n + 1)))))

    @classmethod
    def from_ranges(cls, n: int, ranges, weights=None) -> "CumulativeRangeDist":
        """Empirical distribution over 1-based inclusive ranges."""
        pmf = np.zeros((n, n))
        w = np.ones(len(ranges)) if weights is None else np.asarray(weights, float)
        for (l, r), x in zip(ranges, w):
            pmf[l - 1, r - 1] += x
        return cls(pmf / pmf.sum())

    def __getitem__(self, xy):
        return self.table[xy]


def derive_bucket_distribution(cum: CumulativeRangeDist, tags) -> np.ndarray:
    """Probability that each bucket overlaps a random range query."""
    P, N = cum.table, cum.N
    out = np.empty(len(tags))
    for i, (l, r) in enumerate(tags):
        if not (1 <= l <= r <= N):
            raise ValueError(f"tag {(l, r)} outside [1, {N}]")
        out[i] = P[r, N] + P[N, r] - P[r, r] - P[l - 1, l - 1]
    return np.clip(out, 0.0, 1.0)


def uniform_bucket_probability(n: int, l: int, r: int) -> float:
    return (r * (2 * n - r + 1) - l * (l - 1)) / (n * (n + 1))


def normalize(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    s = p.sum()
    if s <= 0:
        return np.full(len(p), 1.0 / len(p))
    return p / s


# -- partition / reply ---------------------------------------------------------


@dataclass
class PendingQuery:
    l: int
    r: int
    seq: int = MAX_SEQ + 1       # sees records with seq < this
    handle: object = None
    value_len: int = 8
    cnt: int = 0
    data: list = field(default_factory=list)
    done: bool = False
    result: np.ndarray | None = None


class CountingKeys:
    """Sequence view over one tag coordinate that counts element reads."""

    def __init__(self, tags, coord):
        self.tags = tags
        self.coord = coord
        self.reads = 0

    def __len__(self):
        return len(self.tags)

    def __getitem__(self, i):
        self.reads += 1
        return self.tags[i][self.coord]


def bucket_span(tags, l: int, r: int, counter: list | None = None):
    """First and last bucket whose tag overlaps ``[l, r]``; ``b_l > b_r`` if none.

    Tags are sorted and non-overlapping, so both ends are binary searches.
    """
    lo = CountingKeys(tags, 1)
    hi = CountingKeys(tags, 0)
    b_l = bisect.bisect_left(lo, l)       # first tag with t.r >= l
    b_r = bisect.bisect_right(hi, r) - 1  # last tag with t.l <= r
    if counter is not None:
        counter.append(lo.reads + hi.reads)
    return b_l, b_r


def finalize(q: PendingQuery) -> np.ndarray:
    """Filter accumulated bucket contents down to the query answer.

    Keeps real records with key in ``[l, r]`` and ``seq < q.seq``, the
    newest version of each key, and drops keys whose newest version is a
    tombstone.  Returned sorted by key.
    """
    if not q.data:
        return np.zeros(0, dtype=record_dtype(q.value_len))
    recs = np.concatenate(q.data)
    keep = is_real(recs) & (recs["key"] >= q.l) & (recs["key"] <= q.r) & (recs["seq"] < q.seq)
    recs = recs[keep]
    if len(recs) == 0:
        return recs
    order = np.lexsort((recs["seq"], recs["key"]))
    recs = recs[order]
    last = np.ones(len(recs), dtype=bool)
    last[:-1] = recs["key"][1:] != recs["key"][:-1]
    recs = recs[last]
    return recs[(recs["flags"] & FLAG_TOMBSTONE) == 0]


class QueryRegistry:
    """Per-bucket pending query lists for one component."""

    def __init__(self, nbuckets: int):
        self.pending = [[] for _ in range(nbuckets)]

    def add(self, bucket: int, q: PendingQuery):
        self.pending[bucket].append(q)

    def has_pending(self, bucket: int) -> bool:
        return bool(self.pending[bucket])

    def reply(self, bucket: int, records: np.ndarray) -> list:
        """Deliver one bucket's records; returns the queries that completed."""
        done = []
        for q in self.pending[bucket]:
            q.data.append(records)
            q.cnt -= 1
            if q.cnt == 0:
                complete(q)
                done.append(q)
        self.pending[bucket] = []
        return done


def complete(q: PendingQuery):
    q.result = finalize(q)
    q.done = True
    q.data = []


def partition(tags, q: PendingQuery, registry: QueryRegistry, put=None, counter=None) -> list:
    """Register ``q`` on every bucket overlapping it.

    ``put(bucket)`` is called once per bucket (the caller forwards it to the
    sampling pool).  Returns the list of bucket indices; an empty list means
    no bucket can contain an answer.
    """
    b_l, b_r = bucket_span(tags, q.l, q.r, counter)
    if b_r < b_l:
        return []
    q.cnt += b_r - b_l + 1
    for i in range(b_l, b_r + 1):
        if put is not None:
            put(i)
        registry.add(i, q)
    return list(range(b_l, b_r + 1))


def clip(q: PendingQuery, tag) -> tuple:
    return max(q.l, tag[0]), min(q.r, tag[1])

