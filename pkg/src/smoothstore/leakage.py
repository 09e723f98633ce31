"""What the server sees, and how much it tells.

Workload generators (Markov point queries, Zipf point queries, random
ranges), statistics over access traces (transition matrices, relative
standard deviation, uniformity) and a two-sample chi-square distinguisher
between a real trace and an ideal one whose labels are drawn uniformly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass
class MarkovModel:
    states: list
    P: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        n = len(self.states)
        if self.P.shape != (n, n):
            raise ValueError("transition matrix shape does not match states")
        if np.any(self.P < 0) or not np.allclose(self.P.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition matrix must be row-stochastic")
        self._cdf = np.cumsum(self.P, axis=1)

    def stationary(self) -> np.ndarray:
        """Solve ``pi P = pi`` with ``sum(pi) = 1``."""
        n = len(self.states)
        a = np.vstack([self.P.T - np.eye(n), np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        return pi

    def next(self, current: int, rng: np.random.Generator) -> int:
        """Index of the successor of state index ``current``."""
        row = self._cdf[current]
        return min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), len(row) - 1)

    def walk(self, n: int, rng: np.random.Generator, start: int | None = None) -> np.ndarray:
        """State indices of an ``n``-step walk (start drawn from the stationary law)."""
        out = np.empty(n, dtype=np.int64)
        if n == 0:
            return out
        u = rng.random(n)
        if start is None:
            start = int(np.searchsorted(np.cumsum(self.stationary()), u[0], side="right"))
        cur = min(start, len(self.states) - 1)
        out[0] = cur
        for i in range(1, n):
            row = self._cdf[cur]
            cur = min(int(np.searchsorted(row, u[i] * row[-1], side="right")), len(row) - 1)
            out[i] = cur
        return out


def three_key_chain() -> MarkovModel:
    """The three-key correlated workload used in the decorrelation experiments."""
    return MarkovModel(["k1", "k2", "k3"], [[0.30, 0.65, 0.05],
                                            [0.90, 0.00, 0.10],
                                            [0.70, 0.30, 0.00]])


def zipf_weights(n: int, s: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def iid_queries(p, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(len(p), size=count, p=np.asarray(p, float))


def uniform_ranges(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` ranges ``[l, r]`` uniform over all ``n(n+1)/2`` intervals of ``[1, n]``."""
    out = np.empty((0, 2), dtype=np.int64)
    while len(out) < count:
        ab = rng.integers(1, n + 1, size=(2 * (count - len(out)) + 8, 2))
        out = np.concatenate([out, ab[ab[:, 0] <= ab[:, 1]]])
    return out[:count]


def fixed_width_ranges(n: int, width: int, count: int, rng: np.random.Generator) -> np.ndarray:
    width = max(1, min(width, n))
    l = rng.integers(1, n - width + 2, size=count)
    return np.stack([l, l + width - 1], axis=1)


# -- trace statistics ------------------------------------------------------------


def _encode(labels, universe) -> np.ndarray:
    index = {u: i for i, u in enumerate(universe)}
    try:
        return np.fromiter((index[x] for x in labels), dtype=np.int64, count=len(labels))
    except KeyError as e:
        raise ValueError(f"label {e.args[0]!r} not in the universe") from None


def frequencies(labels, universe) -> np.ndarray:
    return np.bincount(_encode(labels, universe), minlength=len(universe))


def transition_matrix(labels, universe, normalize: bool = True) -> np.ndarray:
    """Counts of consecutive ``(a, b)`` label pairs, as frequencies by default."""
    idx = _encode(labels, universe)
    n = len(universe)
    m = np.bincount(idx[:-1] * n + idx[1:], minlength=n * n).reshape(n, n).astype(float)
    if normalize and m.sum() > 0:
        m /= m.sum()
    return m


def aggregate(matrix: np.ndarray, groups) -> np.ndarray:
    """Sum rows and columns of a label matrix by group index (e.g. replicas to buckets)."""
    groups = np.asarray(groups)
    g = groups.max() + 1
    onehot = np.zeros((len(groups), g))
    onehot[np.arange(len(groups)), groups] = 1
    return onehot.T @ matrix @ onehot


def rsd(values) -> float:
    """Population standard deviation over mean."""
    v = np.asarray(values, dtype=float).ravel()
    mean = v.mean()
    if mean == 0:
        raise ValueError("relative standard deviation of an all-zero matrix")
    return float(v.std() / mean)


def uniformity_test(labels, universe) -> tuple:
    """``(max relative deviation from 1/n, chi-square p-value)`` for label frequencies."""
    f = frequencies(labels, universe).astype(float)
    expected = f.sum() / len(universe)
    dev = float(np.abs(f - expected).max() / expected)
    p = float(stats.chisquare(f).pvalue)
    return dev, p


def ideal_trace(universe, count: int, rng: np.random.Generator) -> list:
    """Labels drawn uniformly and independently from ``universe``."""
    idx = rng.integers(len(universe), size=count)
    return [universe[i] for i in idx]


def _two_sample_p(a: np.ndarray, b: np.ndarray) -> float:
    table = np.vstack([a, b]).astype(float)
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return float(stats.chi2_contingency(table, correction=False).pvalue)


def ror_distinguish(real, ideal, universe) -> tuple:
    """Two-sample chi-square p-values on label frequencies and on label pairs.

    Pairs are non-overlapping ``(x[2i], x[2i+1])`` so each pair count is an
    independent draw under the ideal hypothesis.
    """
    a, b = _encode(real, universe), _encode(ideal, universe)
    n = len(universe)
    p_freq = _two_sample_p(np.bincount(a, minlength=n), np.bincount(b, minlength=n))

    def pairs(x):
        x = x[:len(x) // 2 * 2].reshape(-1, 2)
        return np.bincount(x[:, 0] * n + x[:, 1], minlength=n * n)

    p_pair = _two_sample_p(pairs(a), pairs(b))
    return p_freq, p_pair


def latency_summary(latencies) -> dict:
    lat = np.asarray([x for x in latencies if x is not None], dtype=float)
    if len(lat) == 0:
        return {"count": 0}
    return {"count": len(lat), "mean": float(lat.mean()), "p50": float(np.percentile(lat, 50)),
            "p90": float(np.percentile(lat, 90)), "p99": float(np.percentile(lat, 99)),
            "max": float(lat.max())}


# -- export -----------------------------------------------------------------------


def write_matrix_csv(path, matrix: np.ndarray, names=None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if names is not None:
            w.writerow([""] + list(names))
        for i, row in enumerate(matrix):
            w.writerow(([names[i]] if names is not None else []) + [f"{x:.10g}" for x in row])


def write_summary_csv(path, summary: dict):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        for k, v in summary.items():
            w.writerow([k, v])
