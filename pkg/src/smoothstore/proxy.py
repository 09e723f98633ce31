"""The trusted proxy: batch engine, key-value front end, range/dynamic front end.

:class:`SmoothedProxy` owns the keys, the per-component smoothing states
and the global sampling pool.  One call to :meth:`SmoothedProxy.tick`
performs one fixed-size batch: read ``batch_size`` labels, serve pending
requests from the real slots, and write every slot back re-encrypted.

:class:`KVStore` stores one value per bucket and supports linearizable
reads and writes.  :class:`RangeStore` stores sorted records in buckets of
``Z`` and supports range queries, inserts, updates and deletes through
k-binomial dynamization.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .backend import MemoryBackend
from .crypto import LABEL_SIZE, BucketCipher, KeyPair, label_for, sealed_size
from .domerge import compute_bin_capacity, merge_rounds
from .dynamize import BinomialLevels, InsertBuffer, decompose_oracle, level_units, merge_records, purge
from .osort import shuffle_permutation
from .pool import FifoQueue, ReplicaSampler, SamplingPool, WeightPolicy
from .rangestore import (MAX_SEQ, Bucket, ConfigurationError, CumulativeRangeDist, PendingQuery,
                         QueryRegistry, bucket_size_bytes, bucket_span, bucketize, clip, complete,
                         derive_bucket_distribution, is_real, make_records, normalize, pad_value,
                         uniform_bucket_probability)
from .smoothing import READ, WRITE, Op, SmoothingState, build_batch, init_smoothing


@dataclass
class Ticket:
    """Client-side handle for one operation."""

    id: int
    kind: str
    arg: object = None
    submitted: int = 0
    completed: int | None = None
    result: object = None

    @property
    def done(self) -> bool:
        return self.completed is not None

    @property
    def latency(self) -> int | None:
        return None if self.completed is None else self.completed - self.submitted


@dataclass
class Level:
    id: int
    state: SmoothingState
    labels: list
    kind: str = "kv"
    tags: list | None = None
    registry: QueryRegistry | None = None
    n_records: int = 0

    @property
    def n_buckets(self) -> int:
        return self.state.n_buckets


class SmoothedProxy:
    """Batch engine shared by the key-value and range front ends."""

    def __init__(self, backend=None, keys: KeyPair | None = None, rng: np.random.Generator | None = None,
                 *, alpha: float = 2.0, theta: int = 5, policy: WeightPolicy | None = None,
                 batch_size: int = 3, fifo: bool = False, clamp_theta: bool = False,
                 calibrate: bool = True, prior: float = 10.0):
        self.backend = backend if backend is not None else MemoryBackend()
        self.keys = keys or KeyPair.generate()
        self.cipher = BucketCipher(self.keys.seal_key)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.alpha = alpha
        self.theta = theta
        self.policy = policy or WeightPolicy()
        self.batch_size = batch_size
        self.fifo = fifo
        self.clamp_theta = clamp_theta
        self.calibrate = calibrate
        self.prior = prior
        self.levels = {}
        self.pool = None
        self.clock = 0
        self.batches = 0

    def __getstate__(self):
        # the backend is a connection or a large table; callers persist it separately
        state = self.__dict__.copy()
        state["backend"] = None
        return state

    # -- components --------------------------------------------------------

    def _group(self, rep):
        lv, s = rep
        return lv, int(self.levels[lv].state.slot_bucket[s])

    def label_of(self, level_id: int, slot: int) -> bytes:
        return self.levels[level_id].labels[slot]

    def install(self, level_id: int, payloads: list, pi, kind: str = "kv", tags=None,
                n_records: int = 0) -> Level:
        """Replicate, seal and upload one component; returns its :class:`Level`."""
        if level_id in self.levels:
            raise ValueError(f"level {level_id} already installed")
        state = init_smoothing(normalize(pi), self.alpha)
        if self.calibrate:
            state.enable_calibration(self.prior)
        size = len(payloads[0])
        if any(len(p) != size for p in payloads):
            raise ValueError("bucket payloads must have equal length")
        labels = []
        for s in range(state.n_slots):
            k = int(state.slot_bucket[s])
            idx = k if k >= 0 else state.n_buckets + int(state.slot_replica[s])
            rep = int(state.slot_replica[s]) if k >= 0 else 0
            labels.append(label_for(self.keys.label_key, level_id, idx, rep))
        entries = []
        for s, lb in enumerate(labels):
            k = int(state.slot_bucket[s])
            pt = payloads[k] if k >= 0 else self.rng.bytes(size)
            entries.append((lb, self.cipher.seal(pt, lb)))
        # upload in shuffled order so placement reveals nothing about bucket order
        order = shuffle_permutation(len(entries), self.rng)
        self.backend.put_batch([entries[i] for i in order])
        registry = QueryRegistry(state.n_buckets) if kind == "range" else None
        level = Level(level_id, state, labels, kind, tags, registry, n_records)
        self.levels[level_id] = level
        self._refresh_pool()
        return level

    def remove(self, level_id: int) -> Level:
        level = self.levels[level_id]
        if self.pool is not None:
            self.pool.discard(lambda rep: rep[0] == level_id)
        del self.levels[level_id]
        self.backend.delete_batch(level.labels)
        self._refresh_pool()
        return level

    def replica_sampler(self) -> ReplicaSampler:
        ids, probs = [], []
        total = sum(lv.state.n_slots for lv in self.levels.values())
        for lid in sorted(self.levels):
            st = self.levels[lid].state
            w = st.n_slots / total
            for s in np.flatnonzero(st.replica_dist > 0):
                ids.append((lid, int(s)))
                probs.append(w * st.replica_dist[s])
        probs = np.asarray(probs)
        return ReplicaSampler(ids, probs / probs.sum() if len(probs) else probs, self.rng)

    def _refresh_pool(self):
        if not self.levels:
            return
        sampler = self.replica_sampler()
        if self.pool is None:
            if self.fifo:
                self.pool = FifoQueue(sampler, group=self._group)
                return
            theta = min(self.theta, sampler.support_size) if self.clamp_theta else self.theta
            self.pool = SamplingPool(theta, sampler, self.policy, self.rng, group=self._group)
        else:
            if self.clamp_theta and not self.fifo:
                self.pool.theta = min(self.theta, sampler.support_size)
            self.pool.set_sampler(sampler)

    def request(self, level_id: int, bucket: int):
        """Queue a random replica of ``bucket`` for retrieval."""
        slots = self.levels[level_id].state.bucket_slots[bucket]
        s = slots[int(self.rng.integers(len(slots)))] if len(slots) > 1 else slots[0]
        self.pool.put((level_id, s))

    # -- batches -----------------------------------------------------------

    def plan(self, coins=None):
        states = {lid: lv.state for lid, lv in self.levels.items()}
        return build_batch(states, self.pool, self.rng, self.batch_size, self.label_of,
                           direct_sampler=self.pool.sampler, coins=coins)

    def tick(self, coins=None) -> list:
        """Run one batch; returns the tickets completed by it."""
        if not self.levels:
            self.clock += 1
            return []
        plan = self.plan(coins)
        cts = self.backend.get_batch(plan.labels)
        # authenticate everything before touching any state
        opened = [self.cipher.open(ct, sp.label) for sp, ct in zip(plan.slots, cts)]
        self.clock += 1
        self.batches += 1
        latest = {}
        writebacks, done = [], []
        for sp, pt in zip(plan.slots, opened):
            pt = latest.get(sp.label, pt)
            lid, s = sp.replica
            level = self.levels[lid]
            if sp.fake or sp.synthetic:
                # padding draws are cover traffic; only a client's own request answers it
                wb = level.state.refresh(s, pt)
            else:
                wb = self._serve(level, s, pt, done)
            latest[sp.label] = wb
            writebacks.append((sp.label, self.cipher.seal(wb, sp.label)))
        self.backend.put_batch(writebacks)
        return done

    def _serve(self, level: Level, slot: int, pt: bytes, done: list) -> bytes:
        if level.kind == "kv":
            responses, wb = level.state.resolve(slot, pt)
            for ticket, value in responses:
                self.finish(ticket, value)
                done.append(ticket)
            return wb
        k = int(level.state.slot_bucket[slot])
        if k >= 0 and level.registry.has_pending(k):
            records = Bucket.from_bytes(pt, self.value_len).records
            for q in level.registry.reply(k, records):
                self.finish(q.handle, q.result)
                done.append(q.handle)
        return pt

    def finish(self, ticket: Ticket, result):
        ticket.completed = self.clock
        ticket.result = result

    # -- accounting --------------------------------------------------------

    def server_entries(self) -> int:
        return sum(lv.state.n_slots for lv in self.levels.values())

    def resident_bytes(self) -> dict:
        """Logical size of the proxy's state, by part."""
        tags = smoothing = labels = cache = 0
        for lv in self.levels.values():
            st = lv.state
            if lv.tags is not None:
                tags += 16 * len(lv.tags)
            smoothing += sum(a.nbytes for a in (st.pi, st.replicas, st.slot_bucket, st.slot_replica,
                                                st.fake_dist, st.replica_dist, st.observed,
                                                st.prior, st.faked) if a is not None)
            labels += LABEL_SIZE * len(lv.labels)
            cache += sum(len(e.value) + 8 * len(e.fresh) for e in st.cache.values())
        pool = 0 if self.pool is None else 32 * len(self.pool)
        return {"tags": tags, "smoothing": smoothing, "labels": labels, "cache": cache, "pool": pool}


class KVStore(SmoothedProxy):
    """Key-value store over keys ``0..n-1`` with fixed-length values."""

    value_len: int

    def __init__(self, values, pi=None, value_len: int | None = None, **kw):
        super().__init__(**kw)
        values = list(values)
        self.value_len = value_len or max(1, max(len(v) for v in values))
        self.n = len(values)
        pi = np.full(self.n, 1.0 / self.n) if pi is None else np.asarray(pi, float)
        if len(pi) != self.n:
            raise ConfigurationError("distribution and values differ in length")
        self.install(0, [pad_value(v, self.value_len) for v in values], pi, kind="kv")
        self._ids = itertools.count()

    @property
    def state(self) -> SmoothingState:
        return self.levels[0].state

    def _submit(self, key: int, op: Op, ticket: Ticket) -> Ticket:
        if not 0 <= key < self.n:
            raise KeyError(key)
        ticket.submitted = self.clock
        self.state.register(key, op)
        self.request(0, key)
        return ticket

    def get(self, key: int) -> Ticket:
        t = Ticket(next(self._ids), READ, key)
        return self._submit(key, Op(READ, handle=t), t)

    def put(self, key: int, value: bytes) -> Ticket:
        t = Ticket(next(self._ids), WRITE, (key, value))
        return self._submit(key, Op(WRITE, pad_value(value, self.value_len), t), t)

    def run_until_idle(self, max_ticks: int = 1_000_000) -> list:
        done = []
        for _ in range(max_ticks):
            if not self.state.pending:
                break
            done += self.tick()
        return done


class RangeStore(SmoothedProxy):
    """Range-queryable, dynamic store of records with keys in ``[1, N]``.

    ``k`` components follow the k-binomial layout; inserts are buffered at
    the proxy until a full bucket of ``Z`` records can be merged in.
    """

    def __init__(self, z: int = 512, value_len: int = 8, domain: int = 1_000_000, k: int = 8,
                 eps: float = 1.0, lam: float = 512.0, range_dist: CumulativeRangeDist | None = None,
                 merge_rng: np.random.Generator | None = None, **kw):
        kw.setdefault("clamp_theta", True)
        super().__init__(**kw)
        if z < 1:
            raise ConfigurationError("bucket size Z must be positive")
        self.z = z
        self.value_len = value_len
        self.domain = domain
        self.k = k
        self.eps = eps
        self.lam = lam
        self.range_dist = range_dist
        self.merge_rng = merge_rng if merge_rng is not None else self.rng
        self.bookkeeping = BinomialLevels(k)
        self.components = [None] * k
        self.buffer = InsertBuffer(z, value_len)
        self.seq = 0
        self.inflight = {}
        self.rebuilds = []
        self.merge_stats = []
        self.privacy_spent = 0.0
        self._epochs = itertools.count()
        self._ids = itertools.count()
        self._xi = None

    # -- setup -------------------------------------------------------------

    @property
    def bin_capacity(self) -> int:
        if self._xi is None:
            self._xi = compute_bin_capacity(self.z, self.eps, self.lam).xi
        return self._xi

    def bucket_distribution(self, tags) -> np.ndarray:
        if self.range_dist is None:
            p = np.array([uniform_bucket_probability(self.domain, l, r) for l, r in tags])
        else:
            p = derive_bucket_distribution(self.range_dist, tags)
        return normalize(p)

    def load(self, keys, values=None):
        """Bulk-load an initial data set as if inserted one bucket at a time."""
        if self.levels or len(self.buffer) or self.seq:
            raise RuntimeError("load() only works on an empty store")
        keys = np.asarray(keys, dtype=np.int64)
        if len(keys) and (keys.min() < 1 or keys.max() > self.domain):
            raise ValueError(f"keys must lie in [1, {self.domain}]")
        recs = make_records(keys, values, np.arange(len(keys)), value_len=self.value_len)
        self.seq = len(keys)
        recs = recs[np.lexsort((recs["seq"], recs["key"]))]
        recs = purge(recs)
        t = len(recs) // self.z
        D = decompose_oracle(t, self.k)
        self.bookkeeping.D = list(D) + [self.bookkeeping.D[-1]]
        self.bookkeeping.t = t
        pos = 0
        for i, units in enumerate(level_units(D)):
            if units:
                self._install_component(i, recs[pos:pos + units * self.z])
                pos += units * self.z
        for r in recs[pos:]:
            self.buffer.add(int(r["key"]), r["value"].tobytes(), int(r["seq"]))

    def _install_component(self, i: int, records: np.ndarray):
        buckets, tags = bucketize(records, self.z)
        lid = next(self._epochs)
        self.install(lid, [b.to_bytes() for b in buckets], self.bucket_distribution(tags),
                     kind="range", tags=tags, n_records=len(records))
        self.components[i] = lid

    # -- client operations -------------------------------------------------

    def query(self, l: int, r: int) -> Ticket:
        if l > r:
            raise ValueError("empty interval")
        t = Ticket(next(self._ids), "range", (l, r), submitted=self.clock)
        # the query sees exactly the writes issued before it
        q = PendingQuery(l, r, seq=self.seq, handle=t, value_len=self.value_len)
        if len(self.buffer):
            q.data.append(self.buffer.records())
        for lid in self.components:
            if lid is None:
                continue
            level = self.levels[lid]
            self._partition(level, q, (l, r))
        if q.cnt == 0:
            complete(q)
            self.finish(t, q.result)
        else:
            self.inflight[t.id] = q
        return t

    def _partition(self, level: Level, q: PendingQuery, interval):
        b_l, b_r = bucket_span(level.tags, *interval)
        for b in range(b_l, b_r + 1):
            self.request(level.id, b)
            level.registry.add(b, q)
        q.cnt += max(0, b_r - b_l + 1)

    def insert(self, key: int, value: bytes = b"") -> int:
        return self._write(key, value, False)

    update = insert

    def delete(self, key: int) -> int:
        return self._write(key, b"", True)

    def _write(self, key, value, tombstone) -> int:
        if not 1 <= key <= self.domain:
            raise ValueError(f"key {key} outside [1, {self.domain}]")
        seq = self.seq
        if seq > MAX_SEQ:
            raise OverflowError("sequence space exhausted")
        self.seq += 1
        unit = self.buffer.add(key, value, seq, tombstone)
        if unit is not None:
            self.rebuild(unit)
        return seq

    def finish(self, ticket: Ticket, result):
        super().finish(ticket, result)
        self.inflight.pop(ticket.id, None)

    # -- dynamization ------------------------------------------------------

    def _fetch(self, level: Level) -> np.ndarray:
        # enclave side: read one replica of every bucket and decrypt
        st = level.state
        labels = [level.labels[slots[0]] for slots in st.bucket_slots]
        cts = self.backend.get_batch(labels)
        recs = [Bucket.from_bytes(self.cipher.open(ct, lb), self.value_len).records
                for ct, lb in zip(cts, labels)]
        out = np.concatenate(recs)
        return out[is_real(out)]

    def watermark(self) -> int:
        return min((q.seq for q in self.inflight.values()), default=self.seq)

    def rebuild(self, unit: np.ndarray):
        destroyed, new, _ = self.bookkeeping.plan()
        old = [self.components[i] for i in destroyed if self.components[i] is not None]
        arrays = [unit] + [self._fetch(self.levels[lid]) for lid in old]
        stats = []
        merged = merge_records(arrays, self.bin_capacity, self.eps, self.merge_rng, stats)
        self.merge_stats.append(stats)
        self.privacy_spent += self.eps * merge_rounds(len(arrays))
        older_live = any(self.components[j] is not None for j in range(new + 1, self.k))
        # an in-flight query may already hold an older version from a
        # destroyed bucket, so it must still receive the tombstone
        merged = purge(merged, self.watermark(), keep_tombstones=older_live or bool(self.inflight))
        event = self.bookkeeping.advance(self.z)
        self.rebuilds.append(event)
        for i in destroyed:
            self.components[i] = None
        if len(merged):
            self._install_component(new, merged)
        self._transform(old, self.components[new])
        for lid in old:
            self.remove(lid)

    def _transform(self, old_ids, new_id):
        """Move queries pending on destroyed buckets onto the new component."""
        new = self.levels[new_id] if new_id is not None else None
        touched = {}
        for lid in old_ids:
            level = self.levels[lid]
            for b, queue in enumerate(level.registry.pending):
                for q in queue:
                    q.cnt -= 1
                    touched[id(q)] = q
                    lo, hi = clip(q, level.tags[b])
                    if lo <= hi and new is not None:
                        self._partition(new, q, (lo, hi))
                level.registry.pending[b] = []
        for q in touched.values():
            if q.cnt == 0 and not q.done:
                complete(q)
                self.finish(q.handle, q.result)

    # -- driving -----------------------------------------------------------

    def run_until_idle(self, max_ticks: int = 1_000_000) -> list:
        done = []
        for _ in range(max_ticks):
            if not self.inflight:
                break
            done += self.tick()
        return done

    def live_buckets(self) -> int:
        return sum(lv.n_buckets for lv in self.levels.values())

    def server_payload_bytes(self) -> int:
        return self.server_entries() * sealed_size(bucket_size_bytes(self.z, self.value_len))

