"""Differentially oblivious merging of sorted arrays.

Each input is cut into bins of fixed capacity ``xi`` that hold a noisy
number of real elements (``xi/2`` plus a discrete truncated-Laplace draw)
padded with dummies.  Two bin lists are merged through a fixed-size buffer
that is obliviously sorted after every ingested bin; elements that can no
longer be overtaken are evicted as final output.  The order in which bins
are ingested is the only data-dependent, adversary-visible quantity, and
the noisy loads are what make it differentially private.

The minimum bin capacity is found numerically: the exact distribution of a
sum of loads is computed by iterated convolution and binary-searched for
the smallest capacity whose failure probability stays below
``delta = exp(-log2(lambda)**2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .osort import bitonic_argsort

KEY_MAX = np.iinfo(np.int64).max
KEY_MIN = np.iinfo(np.int64).min
CAPACITY_STEP = 4
BUFFER_BINS = 6


class BufferOverflowError(RuntimeError):
    """The merge buffer would exceed its fixed capacity."""


class CapacitySearchError(RuntimeError):
    """No feasible bin capacity below the search bracket."""


@dataclass(frozen=True)
class TruncLaplace:
    """Discrete Laplace on ``[-truncation, truncation]`` with pmf ~ exp(-|x|/scale)."""

    scale: float
    truncation: int

    @classmethod
    def for_capacity(cls, xi: int, eps: float) -> "TruncLaplace":
        return cls(scale=1.0 / eps, truncation=xi // 4)

    def support(self) -> np.ndarray:
        return np.arange(-self.truncation, self.truncation + 1)

    def pmf(self) -> np.ndarray:
        x = np.abs(self.support()).astype(float)
        if self.scale <= 0:
            w = (x == 0).astype(float)
        else:
            w = np.exp(-x / self.scale)
        return w / w.sum()

    def sample(self, rng: np.random.Generator, size=None):
        if self.truncation == 0:
            return 0 if size is None else np.zeros(size, dtype=np.int64)
        draws = rng.choice(self.support(), size=size, p=self.pmf())
        return int(draws) if size is None else draws.astype(np.int64)


def sample_trunc_laplace(params: TruncLaplace, rng: np.random.Generator, size=None):
    return params.sample(rng, size)


def delta_for(lam: float) -> float:
    return math.exp(-math.log2(lam) ** 2)


def theoretical_bin_capacity(eps: float, lam: float) -> int:
    """Asymptotic bound eps^-1 * log2(lambda)^5 with the hidden constant set to 1."""
    return math.ceil(math.log2(lam) ** 5 / eps)


def bins_needed(z: int, xi: int, lam: float) -> int:
    """Number of bins allotted to ``z`` elements at capacity ``xi``."""
    return math.ceil(2 * z / (xi * (1 - math.log2(lam) ** -2)))


def _convolve_power(pmf: np.ndarray, n: int) -> np.ndarray:
    # Direct (non-FFT) convolution keeps relative accuracy in the far tails,
    # which is where the ~1e-35 failure probabilities live.
    result = np.ones(1)
    base = pmf
    while n:
        if n & 1:
            result = np.convolve(result, base)
            result /= result.sum()
        n >>= 1
        if n:
            base = np.convolve(base, base)
            base /= base.sum()
    return result


def failure_probability(z: int, xi: int, eps: float, lam: float) -> float:
    """Exact Pr[sum of the allotted bin loads < z] at capacity ``xi``."""
    nbins = bins_needed(z, xi, lam)
    noise = TruncLaplace.for_capacity(xi, eps)
    t = noise.truncation
    # sum of loads < z  <=>  sum of noise < z - nbins*xi/2
    shortfall = z - nbins * (xi // 2)
    lowest = -nbins * t
    if shortfall <= lowest:
        return 0.0
    total = _convolve_power(noise.pmf(), nbins)
    # index i of ``total`` corresponds to noise sum ``lowest + i``
    cut = min(shortfall - lowest, len(total))
    return float(total[:cut].sum())


@dataclass
class CapacityResult:
    xi: int
    bins: int
    failure_prob: float
    delta: float
    xi_theory: int
    step: int = CAPACITY_STEP


def compute_bin_capacity(z: int, eps: float, lam: float) -> CapacityResult:
    """Smallest capacity on the ``CAPACITY_STEP`` lattice meeting ``delta``.

    The search keeps ``lo`` infeasible and ``hi`` feasible, so the result is
    minimal on the lattice in the sense that ``xi - step`` fails.
    """
    if z < 1 or eps <= 0 or lam < 4:
        raise ValueError("need z >= 1, eps > 0, lambda >= 4")
    delta = delta_for(lam)
    xi_t = theoretical_bin_capacity(eps, lam)

    def feasible(m):
        return failure_probability(z, CAPACITY_STEP * m, eps, lam) <= delta

    lo, hi = 1, max(2, xi_t)
    if feasible(lo):
        hi = lo
    elif not feasible(hi):
        raise CapacitySearchError(f"no feasible capacity up to {CAPACITY_STEP * hi}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    xi = CAPACITY_STEP * hi
    return CapacityResult(
        xi=xi,
        bins=bins_needed(z, xi, lam),
        failure_prob=failure_probability(z, xi, eps, lam),
        delta=delta,
        xi_theory=xi_t,
    )


@dataclass
class BinList:
    """Bins of capacity ``xi``; ``slots`` holds element indices, -1 for dummies."""

    xi: int
    slots: np.ndarray
    loads: np.ndarray
    pivots: np.ndarray

    def __len__(self):
        return len(self.loads)

    def real_indices(self) -> np.ndarray:
        flat = self.slots.ravel()
        return flat[flat >= 0]


def bin_pack(keys, xi: int, eps: float, rng: np.random.Generator) -> BinList:
    """Cut a sorted key array into bins with noisy loads.

    Bin ``i`` takes ``clamp(xi/2 + eta_i, 0, xi)`` real elements in order
    until the input is exhausted; the rest of each bin is dummies.
    """
    if xi < 4:
        raise ValueError("bin capacity must be at least 4")
    keys = np.asarray(keys, dtype=np.int64)
    m = len(keys)
    if m == 0:
        return BinList(xi, np.empty((0, xi), dtype=np.int64), np.empty(0, dtype=np.int64),
                       np.empty(0, dtype=np.int64))
    noise = TruncLaplace.for_capacity(xi, eps)
    loads = np.empty(0, dtype=np.int64)
    # draw in chunks until the loads cover the input
    while loads.sum() < m:
        need = m - int(loads.sum())
        chunk = max(8, 2 * need // max(1, xi // 2) + 8)
        draw = np.clip(xi // 2 + noise.sample(rng, chunk), 0, xi)
        loads = np.concatenate([loads, draw])
    ends = np.cumsum(loads)
    nbins = int(np.searchsorted(ends, m)) + 1
    loads = loads[:nbins].copy()
    loads[-1] -= int(ends[nbins - 1]) - m
    starts = np.concatenate([[0], np.cumsum(loads)[:-1]])

    col = np.arange(xi)
    slots = np.where(col[None, :] < loads[:, None], starts[:, None] + col[None, :], -1)
    last = starts + loads - 1
    pivots = np.where(loads > 0, keys[np.clip(last, 0, m - 1)], KEY_MAX)
    return BinList(xi, slots.astype(np.int64), loads, pivots.astype(np.int64))


@dataclass
class MergeStats:
    """Adversary-visible shape of one merge: which list each ingested bin came from."""

    ingest_order: list = field(default_factory=list)
    iterations: int = 0
    max_occupancy: int = 0


def _keys_of(elements, key):
    if key is None:
        arr = np.asarray(elements, dtype=np.int64)
    else:
        arr = np.fromiter((key(e) for e in elements), dtype=np.int64, count=len(elements))
    if len(arr) and arr.max() >= KEY_MAX:
        raise ValueError("keys must be below the int64 maximum, which marks dummies")
    return arr


def merge_sorted_keys(keys_a, keys_b, xi: int, eps: float, rng: np.random.Generator,
                      stats: MergeStats | None = None) -> np.ndarray:
    """DO-merge two sorted int64 key arrays; returns indices into ``concat(a, b)``."""
    keys_a = np.asarray(keys_a, dtype=np.int64)
    keys_b = np.asarray(keys_b, dtype=np.int64)
    all_keys = np.concatenate([keys_a, keys_b])
    lists = [bin_pack(keys_a, xi, eps, rng), bin_pack(keys_b, xi, eps, rng)]
    offsets = [0, len(keys_a)]

    cap = BUFFER_BINS * xi
    tail = cap - xi
    buf_ids = np.full(cap, -1, dtype=np.int64)
    buf_keys = np.full(cap, KEY_MAX, dtype=np.int64)
    nxt = [0, 0]
    # an exhausted (or empty) list can no longer overtake anything
    last = [KEY_MIN if len(bl) else KEY_MAX for bl in lists]
    out = []

    while nxt[0] < len(lists[0]) or nxt[1] < len(lists[1]):
        if nxt[0] == len(lists[0]):
            src = 1
        elif nxt[1] == len(lists[1]):
            src = 0
        elif last[0] != last[1]:
            # advance whichever list is behind
            src = 0 if last[0] < last[1] else 1
        else:
            src = 0 if lists[0].pivots[nxt[0]] <= lists[1].pivots[nxt[1]] else 1
        bins = lists[src]
        b = nxt[src]

        if (buf_ids[tail:] >= 0).any():
            raise BufferOverflowError(f"merge buffer of {cap} slots overflowed")
        slot = bins.slots[b]
        real = slot >= 0
        buf_ids[tail:] = np.where(real, slot + offsets[src], -1)
        buf_keys[tail:] = np.where(real, all_keys[np.where(real, slot + offsets[src], 0)], KEY_MAX)
        nxt[src] += 1
        last[src] = KEY_MAX if nxt[src] == len(bins) else int(bins.pivots[b])

        order = bitonic_argsort(buf_keys)
        buf_keys = buf_keys[order]
        buf_ids = buf_ids[order]

        occupancy = int((buf_ids >= 0).sum())
        threshold = min(last)
        # reals sort first, so the safe elements form a prefix
        n_safe = int(((buf_ids >= 0) & (buf_keys <= threshold)).sum())
        out.append(buf_ids[:n_safe].copy())
        buf_ids[:n_safe] = -1
        buf_keys[:n_safe] = KEY_MAX
        buf_ids = np.roll(buf_ids, -n_safe)
        buf_keys = np.roll(buf_keys, -n_safe)

        if stats is not None:
            stats.ingest_order.append(src)
            stats.iterations += 1
            stats.max_occupancy = max(stats.max_occupancy, occupancy)

    if (buf_ids >= 0).any():
        # unreachable: the final threshold is +inf
        raise RuntimeError("merge finished with elements left in the buffer")
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def do_merge2(a, b, xi: int, eps: float, rng: np.random.Generator, key=None,
              stats: MergeStats | None = None) -> list:
    """Merge two sorted sequences into one sorted list."""
    a, b = list(a), list(b)
    order = merge_sorted_keys(_keys_of(a, key), _keys_of(b, key), xi, eps, rng, stats)
    both = a + b
    return [both[i] for i in order]


def merge_rounds(k: int) -> int:
    """Merges each element takes part in during a k-way merge."""
    return math.ceil(math.log2(k)) if k > 1 else 0


def k_way_do_merge(arrays, xi: int, eps: float, rng: np.random.Generator, key=None) -> list:
    """Iterative pairwise DO-merge; ceil(log2 k) rounds."""
    arrays = [list(a) for a in arrays]
    if not arrays:
        return []
    while len(arrays) > 1:
        merged = []
        for i in range(0, len(arrays) - 1, 2):
            merged.append(do_merge2(arrays[i], arrays[i + 1], xi, eps, rng, key))
        if len(arrays) % 2:
            merged.append(arrays[-1])
        arrays = merged
    return arrays[0]


def k_way_do_merge_keys(keys, payloads, xi: int, eps: float, rng: np.random.Generator,
                        stats: list | None = None) -> np.ndarray:
    """Iterative pairwise DO-merge of int64 key arrays carrying payload indices.

    Returns the payload indices in merged order.  One :class:`MergeStats`
    per 2-way merge is appended to ``stats`` if given.
    """
    runs = [(np.asarray(k, dtype=np.int64), np.asarray(p)) for k, p in zip(keys, payloads)]
    if not runs:
        return np.empty(0, dtype=np.int64)
    while len(runs) > 1:
        merged = []
        for i in range(0, len(runs) - 1, 2):
            (ka, pa), (kb, pb) = runs[i], runs[i + 1]
            st = MergeStats() if stats is not None else None
            order = merge_sorted_keys(ka, kb, xi, eps, rng, st)
            if stats is not None:
                stats.append(st)
            merged.append((np.concatenate([ka, kb])[order], np.concatenate([pa, pb])[order]))
        if len(runs) % 2:
            merged.append(runs[-1])
        runs = merged
    return runs[0][1]
