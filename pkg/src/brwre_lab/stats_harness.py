"""Randomness streams and the statistical tests used by the verification suite."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as _st

from .errors import DegenerateBinning, TooFewSamples

SIGNIFICANCE = 0.01
_MASK64 = (1 << 64) - 1


def _label_hash(parts: Sequence) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A Philox stream keyed by (seed, index), starting at block `counter`.

    Streams with different indices use different Philox keys, so trial
    substreams need no coordination and are reproducible bit for bit.
    """

    seed: int
    index: int = 0
    counter: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.index <= _MASK64):
            raise ValueError("seed and index must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        key = (self.index << 64) | self.seed
        return np.random.Generator(np.random.Philox(key=key, counter=self.counter))

    def substream(self, *labels) -> "RngStream":
        return RngStream(self.seed, _label_hash((self.index,) + labels))

    def at(self, counter: int) -> "RngStream":
        return RngStream(self.seed, self.index, counter)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class TestReport:
    statistic: float
    dof: int
    p_value: float
    sample_sizes: tuple = ()
    correction: str = "none"
    alpha: float = SIGNIFICANCE
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dof": self.dof,
            "p_value": self.p_value,
            "sample_sizes": list(self.sample_sizes),
            "correction": self.correction,
            "alpha": self.alpha,
            **self.extra,
        }


def bonferroni(alpha: float, m: int) -> float:
    return alpha / max(1, m)


@dataclass(frozen=True)
class Histogram:
    """Weighted histogram over lattice cells.

    `n_eff` is the effective sample size; None marks an exact law.
    """

    weights: Mapping[int, float]
    n_eff: float | None

    @classmethod
    def from_samples(cls, values, weights=None) -> "Histogram":
        values = np.asarray(values)
        if weights is None:
            keys, counts = np.unique(values, return_counts=True)
            return cls({int(k): float(c) for k, c in zip(keys, counts)}, float(values.size))
        w = np.asarray(weights, dtype=float)
        keys, inv = np.unique(values, return_inverse=True)
        sums = np.bincount(inv, weights=w)
        n_eff = w.sum() ** 2 / np.sum(w * w) if w.size else 0.0
        return cls({int(k): float(s) for k, s in zip(keys, sums)}, float(n_eff))

    @classmethod
    def exact(cls, law: Mapping[int, float]) -> "Histogram":
        return cls(dict(law), None)

    def probabilities(self) -> dict[int, float]:
        total = math.fsum(self.weights.values())
        if total <= 0:
            raise DegenerateBinning("histogram has no mass")
        return {k: v / total for k, v in self.weights.items()}


def _pool(cells: list[int], expected: np.ndarray, min_expected: float) -> list[list[int]]:
    # merge adjacent cells (in lattice order) until each group reaches min_expected
    groups: list[list[int]] = []
    cur: list[int] = []
    acc = 0.0
    for i in range(len(cells)):
        cur.append(i)
        acc += expected[i]
        if acc >= min_expected:
            groups.append(cur)
            cur, acc = [], 0.0
    if cur:
        if groups:
            groups[-1].extend(cur)
        else:
            groups.append(cur)
    return groups


def chi_square_two_sample(hist_a: Histogram, hist_b: Histogram, min_expected: float = 5.0,
                          alpha: float = SIGNIFICANCE) -> TestReport:
    """Chi-square comparison of a sampled histogram with an exact law or another sample."""
    if hist_a.n_eff is None and hist_b.n_eff is not None:
        hist_a, hist_b = hist_b, hist_a
    pa = hist_a.probabilities()
    pb = hist_b.probabilities()
    cells = sorted(set(pa) | set(pb))
    if hist_a.n_eff is None:
        # both exact: no sampling noise, the laws either agree or they do not
        diff = max(abs(pa.get(c, 0.0) - pb.get(c, 0.0)) for c in cells)
        same = diff <= 1e-12
        return TestReport(0.0 if same else math.inf, 0, 1.0 if same else 0.0, (), "none", alpha,
                          {"max_abs_difference": diff})
    va = np.array([pa.get(c, 0.0) for c in cells])
    vb = np.array([pb.get(c, 0.0) for c in cells])
    na = hist_a.n_eff
    if hist_b.n_eff is None:
        expected = na * vb
        observed = na * va
        groups = _pool(cells, expected, min_expected)
        if len(groups) < 2:
            raise DegenerateBinning("fewer than two cells after pooling", cells=len(cells))
        o = np.array([observed[g].sum() for g in groups])
        e = np.array([expected[g].sum() for g in groups])
        stat = float(np.sum((o - e) ** 2 / e))
        dof = len(groups) - 1
        return TestReport(stat, dof, float(_st.chi2.sf(stat, dof)), (na,), "none", alpha,
                          {"cells": len(groups)})
    nb = hist_b.n_eff
    pooled = (na * va + nb * vb) / (na + nb)
    groups = _pool(cells, pooled * min(na, nb), min_expected)
    if len(groups) < 2:
        raise DegenerateBinning("fewer than two cells after pooling", cells=len(cells))
    oa = np.array([na * va[g].sum() for g in groups])
    ob = np.array([nb * vb[g].sum() for g in groups])
    p = np.array([pooled[g].sum() for g in groups])
    stat = float(np.sum((oa - na * p) ** 2 / (na * p)) + np.sum((ob - nb * p) ** 2 / (nb * p)))
    dof = len(groups) - 1
    return TestReport(stat, dof, float(_st.chi2.sf(stat, dof)), (na, nb), "none", alpha,
                      {"cells": len(groups)})


def _categorize(feature: np.ndarray, max_levels: int) -> np.ndarray:
    """Map a feature (rows = samples) to category codes, grouping rare
    neighbouring levels so that at most `max_levels` categories remain."""
    f = np.asarray(feature)
    if f.ndim == 1:
        f = f[:, None]
    _, inv, counts = np.unique(f, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    if counts.size <= max_levels:
        return inv
    target = f.shape[0] / max_levels
    group = np.empty(counts.size, dtype=np.int64)
    g, acc = 0, 0
    for i, c in enumerate(counts):
        if acc >= target and g < max_levels - 1:
            g += 1
            acc = 0
        group[i] = g
        acc += c
    return group[inv]


def _contingency_stat(a: np.ndarray, b: np.ndarray, la: int, lb: int) -> float:
    table = np.bincount(a * lb + b, minlength=la * lb).reshape(la, lb).astype(float)
    n = table.sum()
    expected = np.outer(table.sum(1), table.sum(0)) / n
    mask = expected > 0
    return float(np.sum((table[mask] - expected[mask]) ** 2 / expected[mask]))


def permutation_independence(feature_a, feature_b, permutations: int, rng,
                             max_levels: int = 12, alpha: float = SIGNIFICANCE) -> TestReport:
    """Permutation test of independence between two (possibly vector) features.

    Features are reduced to categorical codes and compared through the
    Pearson statistic of their contingency table; the null distribution is
    obtained by permuting the second feature.
    """
    a = np.asarray(feature_a)
    b = np.asarray(feature_b)
    n = a.shape[0]
    if n != b.shape[0]:
        raise ValueError("features must have the same number of samples")
    if n < 100:
        raise TooFewSamples("permutation test needs at least 100 pairs", n=n)
    ca = _categorize(a, max_levels)
    cb = _categorize(b, max_levels)
    la, lb = int(ca.max()) + 1, int(cb.max()) + 1
    obs = _contingency_stat(ca, cb, la, lb)
    gen = as_generator(rng)
    exceed = 0
    for _ in range(permutations):
        s = _contingency_stat(ca, gen.permutation(cb), la, lb)
        if s >= obs - 1e-9 * max(1.0, abs(obs)):
            exceed += 1
    p = (1 + exceed) / (permutations + 1)
    return TestReport(obs, (la - 1) * (lb - 1), p, (n,), "none", alpha,
                      {"permutations": permutations, "levels": [la, lb]})


def mean_ci(samples, z: float = 3.0) -> tuple[float, float, float]:
    """Sample mean, its standard error and the half width z·se."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise TooFewSamples("need at least two samples", n=int(x.size))
    m = math.fsum(x) / x.size
    se = float(np.std(x, ddof=1) / math.sqrt(x.size))
    return m, se, z * se


def wilson_interval(successes: int, n: int, z: float = 2.576) -> tuple[float, float]:
    if n <= 0:
        raise TooFewSamples("empty sample")
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)
