"""Branching random walk in a time-random environment, simulated as a
histogram over (position, barrier class).

Particles at the same site in the same generation reproduce by the same
state law, so site counts are a sufficient statistic; each site draws a
multinomial over the outcomes.  Barrier classes record, for a sorted set
of barriers β_0 < β_1 < ..., the smallest β whose line -β the particle's
whole ancestry stayed above (the last class means "none").
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env_model import EnvironmentLaw, EnvironmentPath, PointProcessLaw
from .errors import CountOverflow, EnumerationTooLarge, PopulationCapExceeded
from .quenched_walk import HarmonicFunction, harmonic_for
from .stats_harness import RngStream, as_generator, mean_ci

DEFAULT_CAP = 10**12
_COUNT_LIMIT = 1 << 62


@dataclass
class PopulationState:
    """counts[c, i] particles of barrier class c at lattice index offset + i."""

    generation: int
    offset: int
    counts: np.ndarray
    betas: tuple[int, ...]

    @classmethod
    def initial(cls, a: int = 0, betas: Sequence[int] = (), count: int = 1) -> "PopulationState":
        betas = tuple(sorted(set(int(b) for b in betas)))
        counts = np.zeros((len(betas) + 1, 1), dtype=np.int64)
        counts[_class_of(a, betas, 0), 0] = count
        return cls(0, a, counts, betas)

    @classmethod
    def from_sites(cls, sites: dict[int, int], betas: Sequence[int] = (), generation: int = 0,
                   survivor_class: dict[int, int] | None = None) -> "PopulationState":
        """Population with `sites[x]` particles at x, classed by their own position only."""
        betas = tuple(sorted(set(int(b) for b in betas)))
        lo, hi = min(sites), max(sites)
        counts = np.zeros((len(betas) + 1, hi - lo + 1), dtype=np.int64)
        for x, k in sites.items():
            c = survivor_class[x] if survivor_class else _class_of(x, betas, 0)
            counts[c, x - lo] += k
        return cls(generation, lo, counts, betas)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.counts.shape[1])

    def site_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def survivors(self, beta: int) -> np.ndarray:
        """Counts per site of particles whose ancestry stayed >= -beta."""
        j = self.betas.index(beta)
        return self.counts[: j + 1].sum(axis=0)

    def min_position(self) -> int:
        occ = np.nonzero(self.site_counts())[0]
        return int(self.offset + occ[0])


def _class_of(x: int, betas: tuple[int, ...], start: int) -> int:
    for j in range(start, len(betas)):
        if x >= -betas[j]:
            return j
    return len(betas)


def _draw_tail(gen: np.random.Generator, tail, n: int) -> np.ndarray:
    """n draws of k >= k_min with P(k) ∝ k^-alpha, by rejection from numpy's zipf."""
    out = np.empty(0, dtype=np.int64)
    while out.size < n:
        k = gen.zipf(tail.alpha, size=max(16, 2 * (n - out.size)))
        out = np.concatenate([out, k[k >= tail.k_min]])
    return out[:n]


def evolve(pop: PopulationState, state: PointProcessLaw, rng, cap: int = DEFAULT_CAP) -> PopulationState:
    """One generation: every (site, class) group draws a multinomial over outcomes."""
    gen = as_generator(rng)
    outs = state.outcomes
    probs = [o.prob for o in outs] + ([state.tail.weight] if state.tail else [])
    pv = np.array(probs) / math.fsum(probs)
    lo_d = min((min(o.children) for o in outs), default=0)
    hi_d = max((max(o.children) for o in outs), default=0)
    tail_groups = []
    if state.tail is not None:
        lo_d = min(lo_d, int(state.tail.displacement_index(state.tail.k_min, state.lattice_step)))
    n_cls, width = pop.counts.shape
    new_off = pop.offset + lo_d
    pos = pop.positions
    barr = np.array(pop.betas, dtype=np.int64)
    new = np.zeros((n_cls, width + hi_d - lo_d), dtype=np.int64)
    for c in range(n_cls):
        occ = np.nonzero(pop.counts[c])[0]
        if occ.size == 0:
            continue
        draws = gen.multinomial(pop.counts[c, occ], pv)
        for o_i, o in enumerate(outs):
            n_o = draws[:, o_i]
            sel = n_o > 0
            if not sel.any():
                continue
            for d in o.children:
                x = pos[occ[sel]] + d
                np.add.at(new, (_child_class(x, barr, c), x - new_off), n_o[sel])
        if state.tail is not None:
            n_t = draws[:, -1]
            for i in np.nonzero(n_t)[0]:
                tail_groups.append((int(pos[occ[i]]), c, int(n_t[i])))
    if tail_groups:
        new, new_off = _add_tail_children(gen, new, new_off, tail_groups, state, pop.betas)
    total = int(new.sum()) if new.size else 0
    if total >= _COUNT_LIMIT or np.any(new < 0):
        raise CountOverflow("particle count overflow")
    if total > cap:
        raise PopulationCapExceeded("population exceeded the cap", population=total, cap=cap,
                                    generation=pop.generation + 1)
    occ = np.nonzero(new.sum(axis=0))[0]
    if occ.size == 0:
        raise PopulationCapExceeded("population died out, which boundary laws forbid")
    return PopulationState(pop.generation + 1, new_off + int(occ[0]), new[:, occ[0]:occ[-1] + 1].copy(),
                           pop.betas)


def _child_class(x: np.ndarray, barr: np.ndarray, c: int) -> np.ndarray:
    # barriers are sorted, so x >= -β_j is monotone in j
    return c + (x[:, None] < -barr[None, c:]).sum(axis=1)


def _add_tail_children(gen, new, new_off, groups, state, betas):
    tail = state.tail
    extra: dict[tuple[int, int], int] = {}
    for x, c, n in groups:
        ks = _draw_tail(gen, tail, n)
        ds = tail.displacement_index(ks, state.lattice_step)
        for d in np.unique(ds):
            y = x + int(d)
            cc = _class_of(y, betas, c)
            extra[(cc, y)] = extra.get((cc, y), 0) + int(ks[ds == d].sum())
    lo = min(new_off, min(y for _, y in extra))
    hi = max(new_off + new.shape[1] - 1, max(y for _, y in extra))
    out = np.zeros((new.shape[0], hi - lo + 1), dtype=np.int64)
    out[:, new_off - lo:new_off - lo + new.shape[1]] = new
    for (cc, y), k in extra.items():
        if k >= _COUNT_LIMIT:
            raise CountOverflow("particle count overflow")
        out[cc, y - lo] += k
    return out, lo


# ---------------------------------------------------------------- martingales

@dataclass(frozen=True)
class MartingaleRow:
    n: int
    W: float
    D: float
    D_beta: dict[int, float]
    min_position: float
    population: int


def martingales(pop: PopulationState, path: EnvironmentPath, betas: Sequence[int] | None = None,
                harmonic: HarmonicFunction | None = None) -> MartingaleRow:
    """W_n = Σ e^{-V}, D_n = Σ V e^{-V}, D_n^{(β)} = Σ_{ancestry >= -β} U(θⁿξ, V+β) e^{-V}."""
    h = path.law.lattice_step
    hf = harmonic if harmonic is not None else harmonic_for(path)
    x = pop.positions
    tot = pop.site_counts().astype(float)
    e = np.exp(-h * x)
    W = math.fsum(tot * e)
    D = math.fsum(tot * h * x * e)
    out = {}
    for b in (pop.betas if betas is None else betas):
        s = pop.survivors(b).astype(float)
        keep = s > 0
        if not keep.any():
            out[b] = 0.0
            continue
        if hf.time_independent:
            u = hf.values(x[keep] + b)
        else:
            u = np.array([hf(pop.generation, int(y) + b) for y in x[keep]])
        out[b] = math.fsum(s[keep] * u * e[keep])
    return MartingaleRow(pop.generation, W, D, out, h * pop.min_position(), pop.total)


def simulate_trial(path: EnvironmentPath, horizon: int, betas: Sequence[int], rng, a: int = 0,
                   cap: int = DEFAULT_CAP, record: Sequence[int] | None = None) -> list[MartingaleRow]:
    """Martingale rows at generations 0..horizon (or the listed ones)."""
    gen = as_generator(rng)
    pop = PopulationState.initial(a, betas)
    hf = harmonic_for(path)
    want = set(range(horizon + 1)) if record is None else set(record)
    rows = [martingales(pop, path, harmonic=hf)] if 0 in want else []
    for n in range(1, horizon + 1):
        pop = evolve(pop, path.law_at(n), gen, cap)
        if n in want:
            rows.append(martingales(pop, path, harmonic=hf))
    return rows


def trial_path(law: EnvironmentLaw, stream: RngStream, trial: int) -> EnvironmentPath:
    seed = int(stream.substream("environment", trial).generator().integers(2**63))
    return EnvironmentPath(law, seed)


def run_trials(law: EnvironmentLaw, trials: int, horizon: int, betas: Sequence[int], seed: int,
               threads: int = 1, cap: int = DEFAULT_CAP, record: Sequence[int] | None = None,
               quenched_path: EnvironmentPath | None = None) -> list[list[MartingaleRow]]:
    """Independent trials on disjoint substreams; output is ordered by trial index,
    so it does not depend on `threads`."""
    base = RngStream(seed)

    def one(i):
        path = quenched_path if quenched_path is not None else trial_path(law, base, i)
        return simulate_trial(path, horizon, betas, base.substream("trial", i), cap=cap, record=record)

    if threads <= 1:
        return [one(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, range(trials)))


def rows_to_csv_records(results: list[list[MartingaleRow]], betas: Sequence[int]) -> tuple[list[str], list[list]]:
    header = ["trial", "n", "W_n", "D_n"] + [f"D_n_beta_{b}" for b in betas] + ["min_position"]
    recs = []
    for t, rows in enumerate(results):
        for r in rows:
            recs.append([t, r.n, repr(r.W), repr(r.D)] + [repr(r.D_beta[b]) for b in betas] + [repr(r.min_position)])
    return header, recs


# ---------------------------------------------------------------- exact one-step checks

def _outcome_table(state: PointProcessLaw, max_outcomes: int = 64):
    if not state.is_finite:
        raise EnumerationTooLarge("tail families cannot be enumerated")
    if len(state.outcomes) > max_outcomes:
        raise EnumerationTooLarge("too many outcomes", outcomes=len(state.outcomes))
    return [(o.prob, o.children) for o in state.outcomes]


@dataclass(frozen=True)
class OneStepResiduals:
    W: float
    D: float
    D_beta: float

    def max(self) -> float:
        return max(self.W, self.D, self.D_beta)


def one_step_martingale_check(particles: Sequence[int], path: EnvironmentPath, beta: int, n: int,
                              survived: Sequence[bool] | None = None, max_terms: int = 10**6,
                              tol: float = 1e-10) -> OneStepResiduals:
    """E_ξ[M_{n+1} | F_n] - M_n for M = W, D, D^{(β)} by enumerating every joint
    offspring realization of the listed particles (positions at generation n).

    `survived[i]` says whether particle i's ancestry stayed >= -β (defaults
    to its own position being >= -β)."""
    h = path.law.lattice_step
    state = path.law_at(n + 1)
    table = _outcome_table(state)
    if len(table) ** len(particles) > max_terms:
        raise EnumerationTooLarge("too many joint realizations", count=len(table) ** len(particles))
    hf = harmonic_for(path, tol)
    alive = list(survived) if survived is not None else [x >= -beta for x in particles]

    def U(t, y):
        return hf(t, y)

    W0 = math.fsum(math.exp(-h * x) for x in particles)
    D0 = math.fsum(h * x * math.exp(-h * x) for x in particles)
    Db0 = math.fsum(U(n, x + beta) * math.exp(-h * x) for x, ok in zip(particles, alive) if ok)
    EW, ED, EDb = [], [], []
    for combo in itertools.product(table, repeat=len(particles)):
        p = math.prod(c[0] for c in combo)
        terms_w, terms_d, terms_db = [], [], []
        for x, ok, (_, kids) in zip(particles, alive, combo):
            for c in kids:
                y = x + c
                terms_w.append(math.exp(-h * y))
                terms_d.append(h * y * math.exp(-h * y))
                if ok and y >= -beta:
                    terms_db.append(U(n + 1, y + beta) * math.exp(-h * y))
        w, d, db = math.fsum(terms_w), math.fsum(terms_d), math.fsum(terms_db)
        EW.append(p * w)
        ED.append(p * d)
        EDb.append(p * db)
    return OneStepResiduals(abs(math.fsum(EW) - W0), abs(math.fsum(ED) - D0), abs(math.fsum(EDb) - Db0))


# ---------------------------------------------------------------- probes

@dataclass(frozen=True)
class ConnectionReport:
    beta: int
    horizon: int
    included: int
    excluded_fraction: float
    median_ratio: float
    ratios_by_generation: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.included > 0 and 0.9 <= self.median_ratio <= 1.1

    def to_dict(self) -> dict:
        return {"beta": self.beta, "horizon": self.horizon, "included": self.included,
                "excluded_fraction": self.excluded_fraction, "median_ratio": self.median_ratio,
                "median_ratio_by_generation": list(self.ratios_by_generation), "passed": self.passed}


def connection_probe(law: EnvironmentLaw, beta: int, trials: int, horizon: int, seed: int = 0,
                     threads: int = 1, cap: int = DEFAULT_CAP) -> ConnectionReport:
    """D_n^{(β)} / (D_n + β W_n) on trials whose global minimum stayed >= -β."""
    res = run_trials(law, trials, horizon, [beta], seed, threads, cap)
    h = law.lattice_step
    ratios = []
    kept = 0
    for rows in res:
        if min(r.min_position for r in rows) < -h * beta:
            continue
        kept += 1
        ratios.append([r.D_beta[beta] / (r.D + h * beta * r.W) for r in rows])
    if not ratios:
        return ConnectionReport(beta, horizon, 0, 1.0, math.nan, ())
    arr = np.array(ratios)
    med = tuple(float(v) for v in np.median(arr, axis=0))
    return ConnectionReport(beta, horizon, kept, 1.0 - kept / trials, med[-1], med)


@dataclass(frozen=True)
class AdditiveDecayReport:
    early: int
    late: int
    median_early: float
    median_late: float

    @property
    def passed(self) -> bool:
        return self.median_late <= 0.5 * self.median_early

    def to_dict(self) -> dict:
        return {"early": self.early, "late": self.late, "median_W_early": self.median_early,
                "median_W_late": self.median_late, "passed": self.passed}


def additive_decay_probe(law: EnvironmentLaw, trials: int = 200, early: int = 5, late: int = 45,
                         seed: int = 0, threads: int = 1, cap: int = DEFAULT_CAP) -> AdditiveDecayReport:
    res = run_trials(law, trials, late, [], seed, threads, cap, record=[early, late])
    e = np.median([rows[0].W for rows in res])
    l_ = np.median([rows[1].W for rows in res])
    return AdditiveDecayReport(early, late, float(e), float(l_))


def w1_mean_check(law: EnvironmentLaw, trials: int, seed: int = 0) -> tuple[float, float]:
    """Sample mean of W_1 and its standard error (E[W_1] = 1 for boundary laws)."""
    gen = RngStream(seed).substream("w1").generator()
    h = law.lattice_step
    states = law.sample_states(gen, trials)
    vals = np.empty(trials)
    for s_i, (_, s) in enumerate(law.states):
        idx = np.nonzero(states == s_i)[0]
        if idx.size == 0:
            continue
        yv = [math.fsum(math.exp(-h * c) for c in o.children) for o in s.outcomes]
        pv = np.array([o.prob for o in s.outcomes])
        k = np.searchsorted(np.cumsum(pv), gen.random(idx.size) * pv.sum(), side="right")
        vals[idx] = np.array(yv)[np.minimum(k, len(yv) - 1)]
    m, se, _ = mean_ci(vals)
    return m, se
