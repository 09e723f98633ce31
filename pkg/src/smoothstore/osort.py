"""Bitonic sorting network with a recordable compare-exchange trace.

Every stage of the network is a set of disjoint index pairs, so a stage is
executed as one vectorised numpy step.  The pairs touched depend only on the
padded input length, never on the data; :class:`SortTrace` records them so
tests can check that two inputs of equal length produce identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SortTrace:
    """Compare-exchange pairs in execution order, one array per stage."""

    stages: list = field(default_factory=list)

    def pairs(self) -> np.ndarray:
        if not self.stages:
            return np.empty((0, 2), dtype=np.int64)
        return np.concatenate(self.stages)

    def __len__(self):
        return sum(len(s) for s in self.stages)

    def to_bytes(self) -> bytes:
        return self.pairs().astype("<i8").tobytes()


def padded_length(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def network_size(n: int) -> int:
    """Compare-exchange count of the bitonic network for ``n`` (power of two)."""
    if n <= 1:
        return 0
    p = n.bit_length() - 1
    return (n // 2) * p * (p + 1) // 2


def _sentinel(dtype):
    if np.issubdtype(dtype, np.floating):
        return np.inf
    return np.iinfo(dtype).max


def _stage_pairs(n, k, j):
    idx = np.arange(n).reshape(-1, 2, j)
    return np.stack([idx[:, 0, :].ravel(), idx[:, 1, :].ravel()], axis=1)


def bitonic_argsort(keys, trace: SortTrace | None = None) -> np.ndarray:
    """Return the permutation that sorts ``keys`` ascending.

    ``keys`` is a 1-D numeric array.  The input is padded with +inf
    sentinels to the next power of two; padded positions are dropped from
    the returned permutation.
    """
    keys = np.asarray(keys)
    if keys.ndim != 1:
        raise ValueError("keys must be one-dimensional")
    n = len(keys)
    size = padded_length(n)
    k_arr = np.full(size, _sentinel(keys.dtype), dtype=keys.dtype)
    k_arr[:n] = keys
    pos = np.arange(size, dtype=np.int64)

    k = 2
    while k <= size:
        j = k // 2
        while j >= 1:
            kb = k_arr.reshape(-1, 2, j)
            pb = pos.reshape(-1, 2, j)
            block_start = np.arange(kb.shape[0]) * (2 * j)
            ascending = ((block_start & k) == 0)[:, None]
            lo, hi = kb[:, 0, :], kb[:, 1, :]
            swap = np.where(ascending, lo > hi, lo < hi)
            new_lo = np.where(swap, hi, lo)
            new_hi = np.where(swap, lo, hi)
            kb[:, 0, :], kb[:, 1, :] = new_lo, new_hi
            plo, phi = pb[:, 0, :], pb[:, 1, :]
            new_plo = np.where(swap, phi, plo)
            new_phi = np.where(swap, plo, phi)
            pb[:, 0, :], pb[:, 1, :] = new_plo, new_phi
            if trace is not None:
                trace.stages.append(_stage_pairs(size, k, j))
            j //= 2
        k *= 2
    return pos[pos < n]


def oblivious_sort(elements, key=None, trace: SortTrace | None = None) -> list:
    """Sort ``elements`` with the bitonic network.

    ``key`` maps an element to an integer or float; by default the element
    itself is the key.
    """
    elements = list(elements)
    if key is None:
        keys = np.asarray(elements)
    else:
        keys = np.asarray([key(e) for e in elements])
    if len(elements) == 0:
        return []
    order = bitonic_argsort(keys, trace)
    return [elements[i] for i in order]


def oblivious_shuffle(elements, rng: np.random.Generator, trace: SortTrace | None = None) -> list:
    """Uniformly permute ``elements`` by sorting on random 64-bit weights."""
    elements = list(elements)
    if len(elements) <= 1:
        return elements
    # the top value is reserved for padding sentinels
    weights = rng.integers(0, np.iinfo(np.uint64).max, size=len(elements), dtype=np.uint64)
    order = bitonic_argsort(weights, trace)
    return [elements[i] for i in order]


def shuffle_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Permutation produced by :func:`oblivious_shuffle` for ``n`` items."""
    if n <= 1:
        return np.arange(n)
    weights = rng.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64)
    return bitonic_argsort(weights)
