"""Series over the power tail family "k children, all at displacement d_k".

Outcome k (k >= k_min) has probability proportional to k^(-alpha) and places
k children at lattice index d_k = round(b * log(log k) / step).  Because d_k
is piecewise constant, every tail expectation splits into blocks of
consecutive k sharing one displacement.  Blocks below `EXPLICIT_LIMIT` are
summed term by term; later blocks use closed-form integrals in u = log k
with an Euler-Maclaurin correction, which is accurate to ~1e-20 there.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import zeta

from .errors import NonFinite, UnsupportedTail

EXPLICIT_LIMIT = 1 << 20
_EXACT_BOUNDARY_LOG = 34.0  # exp(34) < 2**53, so integer block ends are exact floats


@dataclass(frozen=True)
class TailFamily:
    """Descriptor of the countable tail of one environment state.

    weight: total probability carried by the tail outcomes.
    alpha: decay exponent of the outcome probabilities (>= 2).
    loglog_coeff: the coefficient b in d_k = round(b log log k / step).
    k_min: smallest child count in the tail (>= 3 so that log log k > 0).
    """

    weight: float
    alpha: float = 2.0
    loglog_coeff: float = 2.5
    k_min: int = 3
    family: str = "power_k_children"

    def __post_init__(self):
        if self.family != "power_k_children":
            raise UnsupportedTail(f"unknown tail family {self.family!r}")
        if not (0.0 < self.weight <= 1.0):
            raise UnsupportedTail("tail weight must lie in (0, 1]", weight=self.weight)
        if self.alpha < 2.0:
            raise UnsupportedTail("alpha < 2 gives an infinite mean of sum e^{-V}", alpha=self.alpha)
        if self.k_min < 3:
            raise UnsupportedTail("k_min must be at least 3", k_min=self.k_min)
        if self.loglog_coeff <= 0:
            raise UnsupportedTail("loglog_coeff must be positive")

    def normalizer(self) -> float:
        return float(zeta(self.alpha, self.k_min))

    def displacement_index(self, k, step: float):
        k = np.asarray(k, dtype=float)
        return np.floor(self.loglog_coeff * np.log(np.log(k)) / step + 0.5).astype(np.int64)

    def outcome_probability(self, k: int) -> float:
        return self.weight * k ** (-self.alpha) / self.normalizer()

    def to_json(self) -> dict:
        return {"family": self.family, "weight": self.weight, "alpha": self.alpha,
                "loglog_coeff": self.loglog_coeff, "k_min": self.k_min}


def _integral(s: float, m: int, u1: float, u2: float) -> float:
    """int_{u1}^{u2} e^{-(s-1)u} u^m du for integer m >= 0."""
    if u2 <= u1:
        return 0.0
    lam = s - 1.0
    if lam == 0.0:
        return (u2 ** (m + 1) - u1 ** (m + 1)) / (m + 1)

    def anti(u):
        acc = 0.0
        fall = 1.0
        for i in range(m + 1):
            acc += fall * u ** (m - i) / lam ** (i + 1)
            fall *= m - i
        return -math.exp(-lam * u) * acc

    return anti(u2) - anti(u1)


def _poly(c: Sequence[float], u: float) -> float:
    return sum(ci * u ** i for i, ci in enumerate(c))


def _dpoly(c: Sequence[float], u: float) -> float:
    return sum(i * ci * u ** (i - 1) for i, ci in enumerate(c) if i)


def _block_sum(s: float, c: Sequence[float], ulo: float, uhi: float) -> float:
    """sum over integers k in [e^ulo, e^uhi) of k^-s * poly(c, log k)."""
    if ulo < _EXACT_BOUNDARY_LOG:
        ulo = math.log(math.ceil(math.exp(ulo)))
    if uhi < _EXACT_BOUNDARY_LOG:
        uhi = math.log(math.ceil(math.exp(uhi)))
    if uhi <= ulo:
        return 0.0
    total = sum(ci * _integral(s, i, ulo, uhi) for i, ci in enumerate(c))

    def f(u):
        return math.exp(-s * u) * _poly(c, u)

    def fprime(u):
        return math.exp(-(s + 1) * u) * (_dpoly(c, u) - s * _poly(c, u))

    return total + 0.5 * (f(ulo) - f(uhi)) + (fprime(uhi) - fprime(ulo)) / 12.0


@lru_cache(maxsize=16)
def _explicit_grid(tail: TailFamily, step: float):
    k = np.arange(tail.k_min, EXPLICIT_LIMIT, dtype=float)
    d = tail.displacement_index(k, step) * step
    return k, d, np.log(k)


def tail_sum(tail: TailFamily, step: float, power: int,
             coeffs: Callable[[float], Sequence[float]], rel_tol: float = 1e-17,
             max_blocks: int = 200000) -> float:
    """sum_k p_k * k^power * poly(coeffs(D_k), log k) with D_k = step * d_k.

    The caller is responsible for convergence (decided analytically); a
    series whose block terms keep growing raises NonFinite.
    """
    z = tail.normalizer()
    s = tail.alpha - power
    b = tail.loglog_coeff
    k, d, logk = _explicit_grid(tail, step)
    vals = np.zeros_like(k)
    for dv in np.unique(d):
        sel = d == dv
        vals[sel] = np.polynomial.polynomial.polyval(logk[sel], coeffs(float(dv)))
    explicit = math.fsum(k ** (-s) * vals)
    # block part, starting from the block containing EXPLICIT_LIMIT
    u_start = math.log(EXPLICIT_LIMIT)
    j = int(tail.displacement_index(EXPLICIT_LIMIT, step))
    parts = []
    small_run = 0
    prev = math.inf
    for _ in range(max_blocks):
        lo = math.exp((j - 0.5) * step / b)
        hi = math.exp((j + 0.5) * step / b)
        ulo = max(lo, u_start)
        if hi > 700.0 / max(s - 1.0, 1e-300) and s > 1.0:
            break  # k^-s with log k > 700/(s-1): contributions below double range
        if hi > 1e100:
            raise NonFinite("tail series did not settle before numeric range ended")
        term = _block_sum(s, coeffs(j * step), ulo, hi)
        parts.append(term)
        running = abs(explicit) + abs(math.fsum(parts))
        if abs(term) <= rel_tol * max(running, 1e-300):
            small_run += 1
            if small_run >= 3 and abs(term) <= prev:
                break
        else:
            small_run = 0
        prev = abs(term)
        j += 1
    else:
        raise NonFinite("tail series did not converge within the block budget")
    return tail.weight / z * (explicit + math.fsum(parts))


def bertrand(s: float, q: float, r: float = 0.0) -> tuple[bool, str]:
    """Convergence of sum k^-s (log k)^-q (log log k)^-r and the growth of
    its partial sums up to K when divergent."""
    if s > 1:
        return True, "finite"
    if s < 1:
        return False, f"K^{1 - s:g}"
    if q > 1:
        return True, "finite"
    if q < 1:
        return False, f"(log K)^{1 - q:g}"
    if r > 1:
        return True, "finite"
    if r < 1:
        return False, f"(log log K)^{1 - r:g}" if r != 1 else "log log log K"
    return False, "log log log K"


def block_weights(tail: TailFamily, step: float, power: int, weight_of_index: Callable[[int], float],
                  rel_tol: float = 1e-18, max_blocks: int = 100000) -> dict[int, float]:
    """Per displacement index j: weight_of_index(j) * sum_{k: d_k = j} p_k k^power,
    truncated once further blocks are negligible."""
    z = tail.normalizer()
    s = tail.alpha - power
    k, d, _ = _explicit_grid(tail, step)
    idx = np.rint(d / step).astype(np.int64)
    base = idx.min()
    sums = np.bincount(idx - base, weights=k ** (-s))
    out = {int(base + i): float(v) * weight_of_index(int(base + i)) for i, v in enumerate(sums) if v > 0}
    u_start = math.log(EXPLICIT_LIMIT)
    j = int(tail.displacement_index(EXPLICIT_LIMIT, step))
    b = tail.loglog_coeff
    total = math.fsum(out.values())
    for _ in range(max_blocks):
        lo = math.exp((j - 0.5) * step / b)
        hi = math.exp((j + 0.5) * step / b)
        if hi > 1e100 or (s > 1.0 and hi > 700.0 / (s - 1.0)):
            break
        val = _block_sum(s, [1.0], max(lo, u_start), hi) * weight_of_index(j)
        out[j] = out.get(j, 0.0) + val
        total += val
        if abs(val) <= rel_tol * abs(total) and j > 0:
            break
        j += 1
    return {j: tail.weight / z * v for j, v in out.items()}
