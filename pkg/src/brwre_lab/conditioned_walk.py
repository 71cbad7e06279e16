"""The walk conditioned to stay above -β, built as a Doob transform by U.

Kernel: P⁺(x; y) = U(θ^{n+1}ξ, y+β) 1{y >= -β} μ_{n+1}(y-x) / U(θⁿξ, x+β).
Marginals are computed two ways (direct killed DP and chained kernel
rows), and paths are sampled either one at a time or vectorized over
trials.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .env_model import EnvironmentLaw, EnvironmentPath
from .errors import CeilingReached, ContractViolation
from .lattice import LatticeDistribution, killed_propagate
from .quenched_walk import HarmonicFunction, harmonic_for, step_measure
from .stats_harness import as_generator

log = logging.getLogger(__name__)

ROW_TOL = 1e-10
DEFAULT_CEILING = 10_000


@dataclass(frozen=True)
class ConditionedKernelRow:
    n: int
    x: int
    beta: int
    targets: dict[int, float]
    deviation: float  # row sum - 1 before renormalization

    def support(self) -> list[int]:
        return sorted(self.targets)


def _harmonic(path: EnvironmentPath, tol: float, harmonic: HarmonicFunction | None) -> HarmonicFunction:
    return harmonic if harmonic is not None else harmonic_for(path, min(tol, 1e-10))


def kernel_row(path: EnvironmentPath, n: int, x: int, beta: int = 0, tol: float = 1e-10,
               harmonic: HarmonicFunction | None = None) -> ConditionedKernelRow:
    if x < -beta:
        raise ValueError("source below the barrier")
    hf = _harmonic(path, tol, harmonic)
    step = step_measure(path.law_at(n + 1))
    denom = hf(n, x + beta)
    targets = {}
    for d, m in zip(step.support, step.masses):
        y = x + int(d)
        if m > 0 and y >= -beta:
            targets[y] = hf(n + 1, y + beta) * float(m) / denom
    total = math.fsum(targets.values())
    slack = ROW_TOL
    if not hf.exact:
        # each U value carries its own bracket; propagate to the row sum
        rel = hf.error_bound(n, x + beta) / denom
        rel += max(hf.error_bound(n + 1, y + beta) / hf(n + 1, y + beta) for y in targets)
        slack += 2.0 * rel
    dev = total - 1.0
    if abs(dev) > slack:
        raise ContractViolation("conditioned kernel row does not sum to one", n=n, x=x, beta=beta,
                                deviation=dev)
    if dev != 0.0:
        log.debug("kernel row n=%d x=%d beta=%d deviation %.3e", n, x, beta, dev)
    return ConditionedKernelRow(n, x, beta, {y: w / total for y, w in targets.items()}, dev)


def conditioned_marginal(path: EnvironmentPath, n: int, beta: int = 0, tol: float = 1e-10,
                         a: int = 0, ceiling: int = DEFAULT_CEILING,
                         harmonic: HarmonicFunction | None = None) -> LatticeDistribution:
    """Law of ζ_n by killed DP reweighted with U(θⁿξ, · + β)/U(ξ, a + β)."""
    hf = _harmonic(path, tol, harmonic)
    h = path.law.lattice_step
    dist = LatticeDistribution.delta(h, a)
    for i in range(1, n + 1):
        dist, _, _ = killed_propagate(dist, step_measure(path.law_at(i)), beta)
        if dist.max_index is not None and dist.max_index > ceiling:
            raise CeilingReached("conditioned marginal reached the position ceiling", ceiling=ceiling, n=i)
    if n == 0:
        return dist
    xs = dist.support
    if hf.time_independent:
        u = hf.values(xs + beta)
    else:
        u = np.array([hf(n, int(x) + beta) for x in xs])
    return LatticeDistribution(h, dist.offset, dist.masses * u / hf(0, a + beta))


def chained_marginal(path: EnvironmentPath, n: int, beta: int = 0, tol: float = 1e-10, a: int = 0,
                     harmonic: HarmonicFunction | None = None,
                     max_deviation: list | None = None) -> LatticeDistribution:
    """Law of ζ_n by chaining kernel rows; records the largest row deviation."""
    hf = _harmonic(path, tol, harmonic)
    cur = {a: 1.0}
    worst = 0.0
    for i in range(n):
        nxt: dict[int, list[float]] = {}
        for x, m in cur.items():
            row = kernel_row(path, i, x, beta, tol, hf)
            worst = max(worst, abs(row.deviation))
            for y, p in row.targets.items():
                nxt.setdefault(y, []).append(m * p)
        cur = {y: math.fsum(v) for y, v in nxt.items()}
    if max_deviation is not None:
        max_deviation.append(worst)
    return LatticeDistribution.from_dict(path.law.lattice_step, cur)


def sample_conditioned_path(path: EnvironmentPath, beta: int, n: int, rng, a: int = 0,
                            tol: float = 1e-10) -> np.ndarray:
    """One draw of ζ_0..ζ_n as lattice indices."""
    gen = as_generator(rng)
    hf = _harmonic(path, tol, None)
    out = np.empty(n + 1, dtype=np.int64)
    out[0] = a
    x = a
    for i in range(n):
        row = kernel_row(path, i, x, beta, tol, hf)
        ys = row.support()
        cdf = np.cumsum([row.targets[y] for y in ys])
        k = int(np.searchsorted(cdf, gen.random() * cdf[-1], side="right"))
        x = ys[min(k, len(ys) - 1)]
        out[i + 1] = x
    return out


def never_descend_probability(path: EnvironmentPath, x: int, z: int, tol: float = 1e-10,
                              harmonic: HarmonicFunction | None = None) -> float:
    """H(ξ, x, z) = U(ξ, x - z)/U(ξ, x): chance that ζ from x never enters (-∞, z)."""
    if not (x >= z >= 0):
        raise ValueError("need x >= z >= 0")
    if z == 0:
        return 1.0
    hf = _harmonic(path, tol, harmonic)
    return hf(0, x - z) / hf(0, x)


def stay_above_probability(path: EnvironmentPath, x: int, z: int, horizon: int, tol: float = 1e-10) -> float:
    """P(ζ from x stays >= z for `horizon` steps), by killed DP under the
    conditioned kernel.  Decreases to never_descend_probability."""
    hf = _harmonic(path, tol, None)
    h = path.law.lattice_step
    dist = LatticeDistribution.delta(h, x)
    for i in range(1, horizon + 1):
        dist, _, _ = killed_propagate(dist, step_measure(path.law_at(i)), -z)
    if dist.masses.size == 0:
        return 0.0
    if hf.time_independent:
        u = hf.values(dist.support)
    else:
        u = np.array([hf(horizon, int(y)) for y in dist.support])
    return math.fsum(dist.masses * u) / hf(0, x)


# ---------------------------------------------------------------- vectorized sampling

class StepTables:
    """Per-state step supports and masses as arrays, for vectorized draws."""

    def __init__(self, law: EnvironmentLaw):
        self.law = law
        self.support = []
        self.mass = []
        for _, s in law.states:
            st = step_measure(s)
            keep = st.masses > 0
            self.support.append(st.support[keep].astype(np.int64))
            self.mass.append(st.masses[keep].copy())
        self.cum = np.cumsum(law.probs)


def state_matrix(source, trials: int, n: int, gen: np.random.Generator) -> np.ndarray:
    """(trials, n) state indices for times 1..n.

    A realized EnvironmentPath is shared by every trial (quenched); an
    EnvironmentLaw gets independent i.i.d. states per trial (annealed).
    """
    if isinstance(source, EnvironmentPath):
        return np.broadcast_to(source.states(n), (trials, n))
    law = source
    if len(law.states) == 1:
        return np.zeros((trials, n), dtype=np.int64)
    u = gen.random((trials, n))
    idx = np.searchsorted(np.cumsum(law.probs), u, side="right")
    return np.minimum(idx, len(law.states) - 1)


def draw_weighted(gen: np.random.Generator, y: np.ndarray, states: np.ndarray, tables: StepTables,
                  factor) -> tuple[np.ndarray, float]:
    """Move every trial one step; target y' gets weight μ_s(y'-y)·factor(idx, y, y').

    Rows are normalized; the largest |row sum - 1| is returned with the draw.
    """
    out = np.empty_like(y)
    u = gen.random(y.size)
    worst = 0.0
    for s in np.unique(states):
        idx = np.nonzero(states == s)[0]
        d = tables.support[s]
        tgt = y[idx, None] + d[None, :]
        w = tables.mass[s][None, :] * factor(idx, y[idx], tgt)
        tot = w.sum(axis=1)
        worst = max(worst, float(np.max(np.abs(tot - 1.0))))
        cdf = np.cumsum(w, axis=1)
        k = (cdf < (u[idx] * tot)[:, None]).sum(axis=1)
        out[idx] = tgt[np.arange(idx.size), np.minimum(k, d.size - 1)]
    return out, worst


def sample_conditioned_paths(source, beta: int, n: int, trials: int, rng, a: int = 0,
                             harmonic: HarmonicFunction | None = None,
                             states: np.ndarray | None = None) -> np.ndarray:
    """(trials, n+1) draws of ζ_0..ζ_n with a time-independent U.

    `source` is a realized path (quenched) or a law (annealed).  Callers that
    need the per-trial states pass them in as `states` (trials, n).
    """
    gen = as_generator(rng)
    law = source.law if isinstance(source, EnvironmentPath) else source
    hf = harmonic
    if hf is None:
        hf = harmonic_for(source if isinstance(source, EnvironmentPath) else EnvironmentPath(law, 0))
    if not hf.time_independent:
        raise ValueError("vectorized sampling needs a time-independent U; use sample_conditioned_path")
    tables = StepTables(law)
    if states is None:
        states = state_matrix(source, trials, n, gen)
    out = np.empty((trials, n + 1), dtype=np.int64)
    out[:, 0] = a
    y = np.full(trials, a, dtype=np.int64)

    def factor(idx, x, tgt):
        ok = tgt >= -beta
        return np.where(ok, hf.values(np.maximum(tgt, -beta) + beta), 0.0) / hf.values(x + beta)[:, None]

    worst = 0.0
    for i in range(n):
        y, dev = draw_weighted(gen, y, states[:, i], tables, factor)
        worst = max(worst, dev)
        out[:, i + 1] = y
    if worst > ROW_TOL:
        raise ContractViolation("conditioned kernel row does not sum to one", deviation=worst)
    return out
