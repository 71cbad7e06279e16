"""Spinal decomposition under the measure tilted by the truncated derivative martingale.

The spine at x (time n) reproduces by the size-biased law
    q̂(o) ∝ p_o Σ_{v in o} U(θ^{n+1}ξ, x+d_v+β) e^{-(x+d_v)} 1{x+d_v >= -β},
picks its successor v with probability ∝ the summand, and every other
particle reproduces by the plain law.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .brwre_sim import DEFAULT_CAP, MartingaleRow, PopulationState, _outcome_table, evolve, martingales
from .conditioned_walk import conditioned_marginal
from .env_model import EnvironmentPath
from .errors import EnumerationTooLarge, NormalizerMismatch
from .quenched_walk import HarmonicFunction, harmonic_for
from .stats_harness import Histogram, TestReport, as_generator, chi_square_two_sample, mean_ci

MAX_OUTCOMES = 64


@dataclass(frozen=True)
class SizeBiasedLaw:
    weights: tuple[float, ...]                # q̂(o) per outcome, normalized
    child_probs: tuple[tuple[float, ...], ...]  # spine-successor probabilities within each outcome
    normalizer: float                         # Σ_o p_o Σ_v (...) before renormalization
    expected: float                           # U(θⁿξ, x+β) e^{-x}
    deviation: float


def size_biased_offspring_law(path: EnvironmentPath, n: int, x: int, beta: int = 0, tol: float = 1e-10,
                              harmonic: HarmonicFunction | None = None) -> SizeBiasedLaw:
    if x < -beta:
        raise ValueError("spine positions stay >= -beta")
    hf = harmonic if harmonic is not None else harmonic_for(path, tol)
    h = path.law.lattice_step
    table = _outcome_table(path.law_at(n + 1), MAX_OUTCOMES)
    # both sides carry the factor e^{-x}; it is left out so large x does not underflow
    raw, kids = [], []
    for p, children in table:
        terms = [hf(n + 1, x + d + beta) * math.exp(-h * d) if x + d >= -beta else 0.0
                 for d in children]
        s = math.fsum(terms)
        raw.append(p * s)
        kids.append(tuple(t / s for t in terms) if s > 0 else tuple(0.0 for _ in terms))
    scaled = math.fsum(raw)
    u = hf(n, x + beta)
    dev = scaled / u - 1.0
    slack = 10 * tol
    if not hf.exact:
        slack += 2 * (hf.error_bound(n, x + beta) / hf(n, x + beta)) + 2 * tol
    if abs(dev) > slack:
        raise NormalizerMismatch("size-biased normalizer differs from U e^{-x}", n=n, x=x, beta=beta,
                                 deviation=dev)
    ex = math.exp(-h * x)
    return SizeBiasedLaw(tuple(r / scaled for r in raw), tuple(kids), scaled * ex, u * ex, dev)


@dataclass
class SpineRecord:
    positions: list[int]
    siblings: list[tuple[int, ...]] = field(default_factory=list)   # sibling displacements per step
    selection: list[float] = field(default_factory=list)            # P(successor | outcome) per step
    outcome_probs: list[float] = field(default_factory=list)        # q̂ of the drawn outcome
    weight: list[float] = field(default_factory=list)               # U(θⁿξ, V(w_n)+β)e^{-V(w_n)} / (U(ξ,a+β)e^{-a})


def sample_spinal_tree(path: EnvironmentPath, beta: int, a: int, n: int, rng, cap: int = DEFAULT_CAP,
                       tol: float = 1e-10) -> tuple[list[MartingaleRow], SpineRecord]:
    """Spine plus the population it generates; martingales of the whole population per generation."""
    gen = as_generator(rng)
    hf = harmonic_for(path, tol)
    h = path.law.lattice_step
    base = hf(0, a + beta) * math.exp(-h * a)
    rec = SpineRecord([a], weight=[1.0])
    others = None
    rows = [martingales(PopulationState.initial(a, [beta]), path, harmonic=hf)]
    x = a
    for k in range(n):
        law = size_biased_offspring_law(path, k, x, beta, tol, hf)
        state = path.law_at(k + 1)
        o = int(gen.choice(len(law.weights), p=np.array(law.weights)))
        cp = np.array(law.child_probs[o])
        v = int(gen.choice(cp.size, p=cp / cp.sum()))
        children = state.outcomes[o].children
        sib = tuple(c for i, c in enumerate(children) if i != v)
        if others is not None:
            others = evolve(others, state, gen, cap)
        sites: dict[int, int] = {}
        for c in sib:
            sites[x + c] = sites.get(x + c, 0) + 1
        if sites:
            # siblings descend from the spine, which stayed >= -β
            add = PopulationState.from_sites(sites, [beta], k + 1)
            others = add if others is None else _merge(others, add)
        x = x + children[v]
        rec.positions.append(x)
        rec.siblings.append(sib)
        rec.selection.append(float(cp[v] / cp.sum()))
        rec.outcome_probs.append(law.weights[o])
        rec.weight.append(hf(k + 1, x + beta) * math.exp(-h * x) / base)
        full = PopulationState.from_sites({x: 1}, [beta], k + 1)
        if others is not None:
            full = _merge(others, full)
        rows.append(martingales(full, path, harmonic=hf))
    return rows, rec


def _merge(p: PopulationState, q: PopulationState) -> PopulationState:
    lo = min(p.offset, q.offset)
    hi = max(p.offset + p.counts.shape[1], q.offset + q.counts.shape[1])
    out = np.zeros((p.counts.shape[0], hi - lo), dtype=np.int64)
    out[:, p.offset - lo:p.offset - lo + p.counts.shape[1]] += p.counts
    out[:, q.offset - lo:q.offset - lo + q.counts.shape[1]] += q.counts
    return PopulationState(max(p.generation, q.generation), lo, out, p.betas)


# ---------------------------------------------------------------- exhaustive enumeration

# A tree is a tuple of generations; generation k is a tuple of (parent index, position).

def _enumerate_plain(path: EnvironmentPath, a: int, n: int, max_terms: int):
    """(tree, outcome choices, probability) for all labelled trees of depth n under P_ξ."""
    tables = [_outcome_table(path.law_at(k + 1), MAX_OUTCOMES) for k in range(n)]
    results = [((((-1, a),),), 1.0)]
    for k in range(n):
        nxt = []
        for tree, p in results:
            last = tree[-1]
            if len(tables[k]) ** len(last) * (len(nxt) + 1) > max_terms:
                raise EnumerationTooLarge("too many labelled trees", depth=n)
            for combo in itertools.product(range(len(tables[k])), repeat=len(last)):
                q = p
                g = []
                for i, ((_, x), o) in enumerate(zip(last, combo)):
                    prob, kids = tables[k][o]
                    q *= prob
                    g.extend((i, x + c) for c in kids)
                nxt.append((tree + (tuple(g),), q))
        results = nxt
    return results


def _alive(tree, beta: int) -> list[bool]:
    """For each vertex of the last generation: did its whole ancestry stay >= -β?"""
    ok = [tree[0][0][1] >= -beta]
    for g in tree[1:]:
        ok = [ok[pi] and x >= -beta for pi, x in g]
    return ok


def truncated_derivative(tree, path: EnvironmentPath, beta: int, hf: HarmonicFunction) -> float:
    h = path.law.lattice_step
    n = len(tree) - 1
    alive = _alive(tree, beta)
    return math.fsum(hf(n, x + beta) * math.exp(-h * x) for (_, x), ok in zip(tree[-1], alive) if ok)


def _enumerate_spinal(path: EnvironmentPath, beta: int, a: int, n: int, hf: HarmonicFunction, max_terms: int,
                      tol: float):
    """(tree, spine index in last generation, probability) under the spinal construction."""
    tables = [_outcome_table(path.law_at(k + 1), MAX_OUTCOMES) for k in range(n)]
    results = [((((-1, a),),), 0, 1.0)]
    for k in range(n):
        nxt = []
        for tree, s, p in results:
            last = tree[-1]
            sx = last[s][1]
            law = size_biased_offspring_law(path, k, sx, beta, tol, hf)
            if len(tables[k]) ** len(last) * (len(nxt) + 1) > max_terms:
                raise EnumerationTooLarge("too many labelled trees", depth=n)
            for combo in itertools.product(range(len(tables[k])), repeat=len(last)):
                q = p
                g = []
                spine_start = None
                for i, ((_, x), o) in enumerate(zip(last, combo)):
                    prob, kids = tables[k][o]
                    if i == s:
                        q *= law.weights[o]
                        spine_start = len(g)
                        spine_o = o
                    else:
                        q *= prob
                    g.extend((i, x + c) for c in kids)
                if q == 0.0:
                    continue
                for v, pv in enumerate(law.child_probs[spine_o]):
                    if pv > 0:
                        nxt.append((tree + (tuple(g),), spine_start + v, q * pv))
        results = nxt
    return results


def change_of_measure_check(path: EnvironmentPath, beta: int, a: int, n: int,
                            f: Callable[[tuple], float], max_terms: int = 10**6,
                            tol: float = 1e-10) -> tuple[float, float]:
    """(E_spinal[f(tree)], E_P[f(tree) D_n^{(β)}] / (U(ξ,a+β)e^{-a})) by exhaustive enumeration."""
    if n > 2:
        raise EnumerationTooLarge("exhaustive spinal checks are limited to depth 2", depth=n)
    hf = harmonic_for(path, tol)
    h = path.law.lattice_step
    base = hf(0, a + beta) * math.exp(-h * a)
    rhs = math.fsum(p * f(t) * truncated_derivative(t, path, beta, hf) for t, p in
                    _enumerate_plain(path, a, n, max_terms)) / base
    lhs = math.fsum(p * f(t) for t, _, p in _enumerate_spinal(path, beta, a, n, hf, max_terms, tol))
    return lhs, rhs


def spinal_total_mass(path: EnvironmentPath, beta: int, a: int, n: int, tol: float = 1e-10) -> float:
    hf = harmonic_for(path, tol)
    return math.fsum(p for *_, p in _enumerate_spinal(path, beta, a, n, hf, 10**6, tol))


def spine_posterior_check(path: EnvironmentPath, beta: int, a: int, n: int, max_terms: int = 10**6,
                          tol: float = 1e-10) -> float:
    """max over trees and depth-n vertices of |P(spine = v | tree) - U(θⁿξ,V(v)+β)e^{-V(v)}1{alive}/D_n^{(β)}|."""
    if n > 2:
        raise EnumerationTooLarge("exhaustive spinal checks are limited to depth 2", depth=n)
    hf = harmonic_for(path, tol)
    h = path.law.lattice_step
    joint: dict[tuple, dict[int, float]] = {}
    for t, s, p in _enumerate_spinal(path, beta, a, n, hf, max_terms, tol):
        joint.setdefault(t, {}).setdefault(s, 0.0)
        joint[t][s] += p
    worst = 0.0
    for t, spines in joint.items():
        tot = math.fsum(spines.values())
        D = truncated_derivative(t, path, beta, hf)
        alive = _alive(t, beta)
        for v, ((_, x), ok) in enumerate(zip(t[-1], alive)):
            target = hf(n, x + beta) * math.exp(-h * x) / D if ok else 0.0
            worst = max(worst, abs(spines.get(v, 0.0) / tot - target))
    return worst


# ---------------------------------------------------------------- spine position law

def spine_marginal_exact(path: EnvironmentPath, beta: int, a: int, n: int, tol: float = 1e-10) -> dict[int, float]:
    """Law of V(w_n) by DP over the two-stage spine step (outcome, then successor)."""
    hf = harmonic_for(path, tol)
    cur = {a: 1.0}
    for k in range(n):
        nxt: dict[int, list[float]] = {}
        table = _outcome_table(path.law_at(k + 1), MAX_OUTCOMES)
        for x, m in cur.items():
            law = size_biased_offspring_law(path, k, x, beta, tol, hf)
            for (_, kids), w, cp in zip(table, law.weights, law.child_probs):
                for d, pv in zip(kids, cp):
                    if w * pv > 0:
                        nxt.setdefault(x + d, []).append(m * w * pv)
        cur = {y: math.fsum(v) for y, v in nxt.items()}
    return cur


def sample_spine_positions(path: EnvironmentPath, beta: int, a: int, n: int, samples: int, rng) -> np.ndarray:
    """(samples, n+1) spine positions by the two-stage draw, vectorized (time-independent U)."""
    gen = as_generator(rng)
    hf = harmonic_for(path)
    if not hf.time_independent:
        raise ValueError("vectorized spine sampling needs a time-independent U")
    h = path.law.lattice_step
    states = np.asarray(path.states(n))
    tabs = []
    for _, s in path.law.states:
        t = _outcome_table(s, MAX_OUTCOMES)
        owner = np.array([i for i, (_, kids) in enumerate(t) for _ in kids])
        disp = np.array([d for _, kids in t for d in kids], dtype=np.int64)
        pr = np.array([t[i][0] for i in owner])
        tabs.append((len(t), owner, disp, pr))
    out = np.empty((samples, n + 1), dtype=np.int64)
    out[:, 0] = a
    x = np.full(samples, a, dtype=np.int64)
    for k in range(n):
        n_out, owner, disp, pr = tabs[states[k]]
        tgt = x[:, None] + disp[None, :]
        ok = tgt >= -beta
        w = np.where(ok, hf.values(np.maximum(tgt, -beta) + beta), 0.0) * np.exp(-h * disp)[None, :]
        pair = pr[None, :] * w
        per_outcome = np.zeros((samples, n_out))
        for j in range(n_out):
            per_outcome[:, j] = pair[:, owner == j].sum(axis=1)
        cdf = np.cumsum(per_outcome, axis=1)
        o = (cdf < gen.random(samples)[:, None] * cdf[:, -1:]).sum(axis=1)
        o = np.minimum(o, n_out - 1)
        within = np.where(owner[None, :] == o[:, None], w, 0.0)
        c2 = np.cumsum(within, axis=1)
        v = (c2 < gen.random(samples)[:, None] * c2[:, -1:]).sum(axis=1)
        x = tgt[np.arange(samples), np.minimum(v, disp.size - 1)]
        out[:, k + 1] = x
    return out


@dataclass(frozen=True)
class SpineLawReport:
    mode: str
    n: int
    tv: float | None = None
    test: TestReport | None = None

    @property
    def passed(self) -> bool:
        return self.tv <= 1e-8 if self.mode == "exact" else self.test.passed

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "n": self.n, "passed": self.passed}
        if self.tv is not None:
            d["tv"] = self.tv
        if self.test is not None:
            d["test"] = self.test.to_dict()
        return d


def spine_law_check(path: EnvironmentPath, beta: int, a: int, n: int, mode: str = "exact",
                    samples: int = 100_000, rng=None, tol: float = 1e-10) -> SpineLawReport:
    target = conditioned_marginal(path, n, beta, tol, a=a)
    if mode == "exact":
        spine = spine_marginal_exact(path, beta, a, n, tol)
        keys = set(spine) | set(target.to_dict())
        tv = 0.5 * math.fsum(abs(spine.get(k, 0.0) - target.get(k)) for k in keys)
        return SpineLawReport("exact", n, tv=tv)
    if mode != "statistical":
        raise ValueError(f"unknown mode {mode!r}")
    pos = sample_spine_positions(path, beta, a, n, samples, rng)
    rep = chi_square_two_sample(Histogram.from_samples(pos[:, -1]), Histogram.exact(target.to_dict()))
    return SpineLawReport("statistical", n, test=rep)


def inverse_weight_check(path: EnvironmentPath, beta: int, a: int, n: int, samples: int, rng,
                         tol: float = 1e-10) -> tuple[float, float]:
    """Mean and stderr of U(ξ,a+β)e^{-a}/D_n^{(β)} under the spinal measure (target: 1)."""
    gen = as_generator(rng)
    hf = harmonic_for(path, tol)
    base = hf(0, a + beta) * math.exp(-path.law.lattice_step * a)
    vals = []
    for _ in range(samples):
        rows, _ = sample_spinal_tree(path, beta, a, n, gen, tol=tol)
        vals.append(base / rows[-1].D_beta[beta])
    m, se, _ = mean_ci(vals)
    return m, se
