"""Frequency smoothing state for one stored component.

Each logical bucket ``k`` gets ``R(k)`` server-side replicas and the slot
table is padded with dummies to ``n' = ceil(alpha * B)``.  Every batch slot
is real or fake with probability 1/2; real slots follow the client's
replica distribution ``pi(k)/R(k)`` and fake slots follow ``pi_f``, chosen
so the two halves add up to ``1/n'`` per slot:

    pi_f(k, j) = 2/n' - pi(k)/R(k),    pi_f(dummy) = 2/n'

A replica of a hot bucket needs ``pi(k)/R(k) <= 2/n'``, which fixes
``R(k) = max(1, ceil(pi(k) n'/2))``.

Writes only reach the replica that happened to be sampled, so the newest
value of a bucket is held in an update cache until every replica has been
rewritten with it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .rangestore import ConfigurationError

READ = "read"
WRITE = "write"


class AllocationError(ConfigurationError):
    """Replica counts do not fit into the slot table."""


@dataclass
class Op:
    kind: str
    value: bytes | None = None
    handle: object = None


@dataclass
class CacheEntry:
    value: bytes
    fresh: set = field(default_factory=set)


@dataclass
class SmoothingState:
    pi: np.ndarray
    alpha: float
    n_slots: int
    replicas: np.ndarray          # R(k)
    slot_bucket: np.ndarray       # bucket of each slot, -1 for dummies
    slot_replica: np.ndarray      # replica index j of each slot
    bucket_slots: list            # slots of each bucket
    fake_dist: np.ndarray         # pi_f over slots
    replica_dist: np.ndarray      # pi(k)/R(k) over slots (0 for dummies)
    cache: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)
    observed: np.ndarray | None = None     # expected real accesses per slot
    direct: float = 0.0                    # real slots drawn straight from replica_dist
    prior: np.ndarray | None = None        # pseudo-counts for the real rate
    faked: np.ndarray | None = None        # expected fake accesses per slot
    horizon: float = 64.0                  # deficit correction time, in units of n' fake draws
    calibrate: bool = False
    _fake_pdf: np.ndarray | None = None
    _fake_cdf: np.ndarray | None = None

    @property
    def n_buckets(self) -> int:
        return len(self.pi)

    @property
    def n_dummies(self) -> int:
        return int((self.slot_bucket < 0).sum())

    def enable_calibration(self, prior: float = 10.0, horizon: float = 64.0):
        self.calibrate = True
        self.prior = self.replica_dist * (prior * self.n_slots)
        self.observed = np.zeros(self.n_slots)
        self.faked = np.zeros(self.n_slots)
        self.direct = 0.0
        self.horizon = horizon
        self._fake_pdf = self._fake_cdf = None

    @property
    def fake_cdf(self) -> np.ndarray:
        if self._fake_cdf is None:
            self._fake_pdf = self.current_fake_dist()
            self._fake_cdf = np.cumsum(self._fake_pdf)
        return self._fake_cdf

    def real_mass(self) -> np.ndarray:
        return self.observed + self.direct * self.replica_dist

    def real_rate(self) -> np.ndarray:
        """Estimated per-slot distribution of real accesses."""
        mass = self.prior + self.real_mass()
        return mass / mass.sum()

    def current_fake_dist(self) -> np.ndarray:
        """Fake distribution complementing the real rate to ``1/n'`` per slot.

        Deduplication in the sampling pool shifts real accesses away from
        ``replica_dist`` (a pooled replica cannot be requested twice), so
        the complement is taken against the estimated real rate.  Since the
        estimate moves over time, a slow correction also steers fakes toward
        slots whose expected touches so far fall below the mean.  Only
        expected masses enter, never the realized draws, so sampling noise
        is left alone.
        """
        if not self.calibrate or self.observed is None:
            return self.fake_dist
        n = self.n_slots
        seen = self.real_mass() + self.faked
        deficit = seen.sum() / n - seen
        f = np.maximum(2.0 / n - self.real_rate() + deficit / (self.horizon * n), 0.0)
        total = f.sum()
        return f / total if total > 0 else self.fake_dist

    def observe(self, slot: int, mass: float = 1.0):
        """Add expected real-access mass to ``slot``."""
        if self.calibrate:
            self.observed[slot] += mass
            self._fake_cdf = None

    def observe_direct(self, mass: float = 1.0):
        if self.calibrate:
            self.direct += mass
            self._fake_cdf = None

    def observe_fake(self):
        """Account one fake draw from the current fake distribution."""
        if self.calibrate:
            if self._fake_cdf is None:
                self.fake_cdf
            self.faked += self._fake_pdf
            self._fake_cdf = None

    def touch_probability(self) -> np.ndarray:
        """Per-slot probability of being touched by one batch slot (all 1/n')."""
        return 0.5 * self.replica_dist + 0.5 * self.fake_dist

    # -- pending operations ----------------------------------------------

    def register(self, bucket: int, op: Op):
        self.pending.setdefault(bucket, deque()).append(op)

    def has_pending(self, bucket: int) -> bool:
        return bool(self.pending.get(bucket))

    def resolve(self, slot: int, received: bytes):
        """Serve every pending op on the slot's bucket.

        Returns ``(responses, writeback)`` where responses are
        ``(handle, value)`` pairs for reads in arrival order and writeback
        is the plaintext to re-seal into the slot.
        """
        k = int(self.slot_bucket[slot])
        if k < 0:
            return [], received
        entry = self.cache.get(k)
        current = entry.value if entry is not None else received
        responses = []
        for op in self.pending.pop(k, ()):
            if op.kind == READ:
                responses.append((op.handle, current))
            else:
                current = op.value
                if op.handle is not None:
                    responses.append((op.handle, None))
        self._store(k, slot, current, received)
        return responses, current

    def refresh(self, slot: int, received: bytes) -> bytes:
        """Writeback for a fake access: propagate a cached value if one exists."""
        k = int(self.slot_bucket[slot])
        entry = self.cache.get(k) if k >= 0 else None
        if entry is None:
            return received
        self._store(k, slot, entry.value, received)
        return entry.value

    def _store(self, k, slot, value, received):
        entry = self.cache.get(k)
        if entry is None:
            if value == received:
                return
            entry = self.cache[k] = CacheEntry(value)
        elif entry.value != value:
            entry.value = value
            entry.fresh = set()
        entry.fresh.add(slot)
        if len(entry.fresh) == self.replicas[k]:
            del self.cache[k]


def init_smoothing(pi, alpha: float = 2.0) -> SmoothingState:
    """Replica allocation and fake distribution for bucket distribution ``pi``."""
    pi = np.asarray(pi, dtype=float)
    if len(pi) == 0:
        raise ConfigurationError("no buckets to smooth")
    if abs(pi.sum() - 1.0) > 1e-9 or np.any(pi < 0):
        raise ConfigurationError("bucket distribution must be a probability mass")
    if alpha < 1:
        raise ConfigurationError("storage overhead alpha must be at least 1")
    b = len(pi)
    n = math.ceil(alpha * b - 1e-9)
    replicas = np.maximum(1, np.ceil(pi * n / 2 - 1e-12)).astype(np.int64)
    if replicas.sum() > n:
        raise AllocationError(f"{replicas.sum()} replicas do not fit in {n} slots")

    slot_bucket = np.full(n, -1, dtype=np.int64)
    slot_replica = np.zeros(n, dtype=np.int64)
    bucket_slots = []
    s = 0
    for k, r in enumerate(replicas):
        slot_bucket[s:s + r] = k
        slot_replica[s:s + r] = np.arange(r)
        bucket_slots.append(list(range(s, s + r)))
        s += r
    slot_replica[s:] = np.arange(n - s)

    real = slot_bucket >= 0
    replica_dist = np.zeros(n)
    replica_dist[real] = pi[slot_bucket[real]] / replicas[slot_bucket[real]]
    fake_dist = np.where(real, 2.0 / n - replica_dist, 2.0 / n)
    fake_dist = np.maximum(fake_dist, 0.0)
    return SmoothingState(pi, alpha, n, replicas, slot_bucket, slot_replica, bucket_slots,
                          fake_dist, replica_dist)


def optimal_batch_size(n_records: int, z: int, selectivity: float = 0.005) -> int:
    """Buckets fetched per batch, three times the buckets an average query spans."""
    return max(1, math.ceil(3 * n_records * selectivity / z))


@dataclass
class SlotPlan:
    label: bytes
    fake: bool
    replica: tuple        # (level, slot)
    synthetic: bool = False


@dataclass
class BatchPlan:
    slots: list

    def __len__(self):
        return len(self.slots)

    @property
    def labels(self) -> list:
        return [s.label for s in self.slots]


def level_weights(states: dict) -> tuple:
    """Levels and their share of slots; a fake slot picks a level by ``n'``."""
    ids = sorted(states)
    sizes = np.array([states[i].n_slots for i in ids], dtype=float)
    return ids, sizes / sizes.sum()


def draw_index(cdf: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


def _observe(states, rep, p):
    st = states.get(rep[0])
    if st is not None:
        st.observe(rep[1], p)


def build_batch(states: dict, pool, rng: np.random.Generator, batch_size: int, label_of,
                direct_sampler=None, coins=None) -> BatchPlan:
    """Draw one batch of ``batch_size`` replica accesses.

    ``states`` maps level id to :class:`SmoothingState`; ``label_of(level,
    slot)`` returns the server label.  Real slots come from the pool; when
    the pool is empty they fall back to ``direct_sampler`` (a synthetic
    client query).  ``coins`` may force the real/fake choice for tests.
    """
    ids, weights = level_weights(states)
    level_cdf = np.cumsum(weights)
    flips = rng.random(batch_size) < 0.5 if coins is None else np.asarray(coins, dtype=bool)
    slots = []
    for fake in flips:
        if fake:
            lv = ids[draw_index(level_cdf, rng)] if len(ids) > 1 else ids[0]
            st = states[lv]
            s = draw_index(st.fake_cdf, rng)
            st.observe_fake()
            slots.append(SlotPlan(label_of(lv, s), True, (lv, s)))
        else:
            if len(pool):
                rep, syn = pool.get(observe=lambda r, p: _observe(states, r, p))
            else:
                rep, syn = direct_sampler.draw(), True
                for lv, w in zip(ids, weights):
                    states[lv].observe_direct(w)
            slots.append(SlotPlan(label_of(*rep), False, rep, syn))
    return BatchPlan(slots)
