"""Sampling pool that releases pending replica requests in random order.

A FIFO queue of pending requests replays the client's query order to the
server.  The pool instead samples the next request at random (optionally
weighted by age), and keeps at least ``theta`` entries by padding with
synthetic requests drawn from the replica access distribution, so each
release is independent of at least ``theta`` earlier queries.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .rangestore import ConfigurationError


@dataclass(frozen=True)
class WeightPolicy:
    kind: str = "constant"
    rate: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "exponential"):
            raise ConfigurationError(f"unknown weight policy {self.kind!r}")
        if self.rate is None:
            object.__setattr__(self, "rate", 2.0 if self.kind == "exponential" else 1.0)
        if not self.rate > 0 or not np.isfinite(self.rate):
            raise ConfigurationError("weight rate must be positive and finite")
        if self.kind == "exponential" and self.rate < 1:
            raise ConfigurationError("exponential rate below 1 would decay weights to zero")

    @classmethod
    def parse(cls, text: str) -> "WeightPolicy":
        """``constant``, ``linear``, ``linear:0.5``, ``exponential:1.5``."""
        kind, _, rate = text.partition(":")
        return cls(kind.strip(), float(rate) if rate else None)


class ReplicaSampler:
    """Draws replica ids i.i.d. from a fixed probability mass."""

    def __init__(self, ids, probs, rng: np.random.Generator):
        probs = np.asarray(probs, dtype=float)
        if len(ids) != len(probs):
            raise ValueError("ids and probs differ in length")
        if len(ids) and abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"replica distribution sums to {probs.sum()}")
        if np.any(probs < 0):
            raise ConfigurationError("negative replica probability")
        self.ids = list(ids)
        self.probs = probs
        self._cdf = np.cumsum(probs)
        self.rng = rng

    @property
    def support_size(self) -> int:
        return int((self.probs > 0).sum())

    def draw(self):
        if not self.ids:
            raise ConfigurationError("empty replica distribution")
        i = int(np.searchsorted(self._cdf, self.rng.random() * self._cdf[-1], side="right"))
        return self.ids[min(i, len(self.ids) - 1)]


class SamplingPool:
    """Deduplicating pool with weighted random release.

    ``group`` maps a replica id to the logical item it serves (a bucket);
    the pool tracks which replicas of each group are present so callers can
    avoid queueing a second replica of an item that is already pending.
    """

    def __init__(self, theta: int, sampler: ReplicaSampler, policy: WeightPolicy | None = None,
                 rng: np.random.Generator | None = None, group=None):
        if theta < 0:
            raise ConfigurationError("theta must be non-negative")
        self.theta = theta
        self.policy = policy or WeightPolicy()
        self.rng = rng if rng is not None else sampler.rng
        self.group = group or (lambda rep: rep)
        self.items = []
        self.synthetic = []
        # exponential weights are stored as logs relative to ``_offset``
        self._w = np.empty(16)
        self._offset = 0.0
        self._log = self.policy.kind == "exponential"
        self.index = {}
        self.groups = {}
        self.set_sampler(sampler)

    # Setup lines 5-8: pad with synthetic draws up to theta
    def set_sampler(self, sampler: ReplicaSampler):
        if self.theta > sampler.support_size:
            raise ConfigurationError(
                f"theta={self.theta} exceeds the {sampler.support_size} distinct replicas")
        self.sampler = sampler
        self.refill()

    def refill(self):
        while len(self.items) < self.theta:
            self.put(self.sampler.draw(), synthetic=True)

    def __len__(self):
        return len(self.items)

    def __contains__(self, replica):
        return replica in self.index

    @property
    def weights(self) -> np.ndarray:
        """Current sampling weights, rescaled so the largest is 1 under exponential growth."""
        w = self._w[:len(self.items)]
        if self._log:
            return np.maximum(np.exp(w - w.max()), np.finfo(float).tiny) if len(w) else w.copy()
        return w.copy()

    def members_of(self, group) -> set:
        return self.groups.get(group, set())

    def is_synthetic(self, replica) -> bool:
        return self.synthetic[self.index[replica]]

    def mark_real(self, replica):
        self.synthetic[self.index[replica]] = False

    def put(self, replica, synthetic: bool = False) -> bool:
        """Add ``replica``; returns False if it is already pooled.

        A real request landing on a pooled synthetic entry turns that entry
        real so the caller's query is still served.
        """
        i = self.index.get(replica)
        if i is not None:
            if not synthetic:
                self.synthetic[i] = False
            return False
        n = len(self.items)
        if n == len(self._w):
            self._w = np.concatenate([self._w, np.empty(n)])
        self._w[n] = -self._offset if self._log else 1.0
        self.items.append(replica)
        self.synthetic.append(synthetic)
        self.index[replica] = n
        self.groups.setdefault(self.group(replica), set()).add(replica)
        return True

    def _sample_index(self) -> int:
        n = len(self.items)
        if self.policy.kind == "constant":
            return int(self.rng.integers(n))
        w = self._w[:n]
        cdf = np.cumsum(np.exp(w - w.max()) if self._log else w)
        i = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
        return min(i, n - 1)

    def _remove(self, i: int):
        # swap with the last entry, then drop the tail
        n = len(self.items) - 1
        rep = self.items[i]
        del self.index[rep]
        g = self.group(rep)
        members = self.groups[g]
        members.discard(rep)
        if not members:
            del self.groups[g]
        if i != n:
            self.items[i] = self.items[n]
            self.synthetic[i] = self.synthetic[n]
            self._w[i] = self._w[n]
            self.index[self.items[i]] = i
        self.items.pop()
        self.synthetic.pop()

    def _update_weights(self):
        n = len(self.items)
        if self.policy.kind == "linear":
            self._w[:n] += self.policy.rate
        elif self._log:
            # multiplying every weight by rate == shifting the log origin
            self._offset += np.log(self.policy.rate)

    def release_probabilities(self) -> np.ndarray:
        """Probability of each current item being the next one released."""
        n = len(self.items)
        if self.policy.kind == "constant":
            return np.full(n, 1.0 / n)
        w = self._w[:n]
        w = np.exp(w - w.max()) if self._log else w
        return w / w.sum()

    def get(self, observe=None):
        """Release one entry; returns ``(replica, synthetic)``.

        ``observe(replica, p)`` is called for every pooled item with its
        release probability before the draw.
        """
        if not self.items:
            raise IndexError("get from an empty pool")
        if observe is not None:
            for rep, p in zip(self.items, self.release_probabilities()):
                observe(rep, p)
        i = self._sample_index()
        rep, syn = self.items[i], self.synthetic[i]
        self._remove(i)
        self._update_weights()
        self.refill()
        return rep, syn

    def discard(self, predicate) -> list:
        """Drop every pooled replica matching ``predicate``; returns them."""
        gone = [rep for rep in self.items if predicate(rep)]
        for rep in gone:
            self._remove(self.index[rep])
        return gone


class FifoQueue:
    """First-in first-out pending queue with the pool interface.

    This is the queue a plain frequency-smoothing proxy uses; it preserves
    the client's query order and serves as the correlated control.
    """

    theta = 0

    def __init__(self, sampler: ReplicaSampler, group=None):
        self.sampler = sampler
        self.group = group or (lambda rep: rep)
        self.items = deque()
        self.index = {}
        self.groups = {}

    def set_sampler(self, sampler: ReplicaSampler):
        self.sampler = sampler

    def refill(self):
        pass

    def __len__(self):
        return len(self.items)

    def __contains__(self, replica):
        return replica in self.index

    def members_of(self, group) -> set:
        return self.groups.get(group, set())

    def put(self, replica, synthetic: bool = False) -> bool:
        if replica in self.index:
            return False
        self.items.append(replica)
        self.index[replica] = True
        self.groups.setdefault(self.group(replica), set()).add(replica)
        return True

    def _forget(self, rep):
        del self.index[rep]
        g = self.group(rep)
        self.groups[g].discard(rep)
        if not self.groups[g]:
            del self.groups[g]

    def get(self, observe=None):
        rep = self.items.popleft()
        if observe is not None:
            observe(rep, 1.0)
        self._forget(rep)
        return rep, False

    def discard(self, predicate) -> list:
        gone = [rep for rep in self.items if predicate(rep)]
        for rep in gone:
            self._forget(rep)
        self.items = deque(rep for rep in self.items if rep in self.index)
        return gone
