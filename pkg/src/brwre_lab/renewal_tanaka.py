"""Ladder structure of the annealed walk, renewal functions, and the
excursion (Tanaka) decomposition of the conditioned walk at β = 0.

Conventions on the lattice (indices, real value = Δ·index):
  R⁻(x) = Σ_{k>=0} P(S_{γ_k} >= -x),   R⁻(0) = 1;
  R(x)  = Σ_{n>=1} P(S_{Γ_n} < x),     R(0) = 1 by convention;
  the β-shifted occupation measure is g_β(x) = Σ_{n>=1} P(S_n = x, min_{k<=n} S_k >= -β).
For β = 0, g_0 coincides with the increments of R.  For β > 0 the
measure is assembled from both ladder renewals by splitting paths at
their minimum: g_β(x) = Σ_{z=0}^{β} u⁻(z) v(x+z) - 1{x = 0}.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .conditioned_walk import (StepTables, draw_weighted, kernel_row, sample_conditioned_paths,
                               state_matrix)
from .env_model import EnvironmentLaw, EnvironmentPath
from .errors import (BudgetExceeded, ContractViolation, EnumerationTooLarge, GridTooSmall, InvalidConfig,
                     TooFewUncensored)
from .ladder import LadderLaws, ladder_laws
from .lattice import LatticeDistribution, StepMeasure, killed_propagate
from .quenched_walk import HarmonicFunction, annealed_step_measure, harmonic_for, step_measure
from .stats_harness import (SIGNIFICANCE, Histogram, RngStream, TestReport, as_generator, bonferroni,
                            chi_square_two_sample, mean_ci, permutation_independence)


# ---------------------------------------------------------------- ladder epochs

@dataclass(frozen=True)
class LadderAnalysis:
    descending_epochs: tuple[int, ...]
    descending_heights: tuple[float, ...]
    ascending_epochs: tuple[int, ...]
    ascending_heights: tuple[float, ...]
    descending_open: int  # steps after the last descending epoch (the next one is censored)
    ascending_open: int


def ladder_decompose(walk: Sequence[float]) -> LadderAnalysis:
    """Strict descending epochs γ and weak ascending epochs Γ of a finite path."""
    s = list(walk)
    if not s:
        raise ValueError("empty path")
    dsc, asc = [0], [0]
    lo = hi = s[0]
    for n in range(1, len(s)):
        if s[n] < lo:
            dsc.append(n)
            lo = s[n]
        if s[n] >= hi:
            asc.append(n)
            hi = s[n]
    end = len(s) - 1
    return LadderAnalysis(tuple(dsc), tuple(s[i] for i in dsc[1:]), tuple(asc),
                          tuple(s[i] for i in asc[1:]), end - dsc[-1], end - asc[-1])


# ---------------------------------------------------------------- renewal tables

@dataclass(frozen=True)
class RenewalTable:
    x: np.ndarray
    R_minus: np.ndarray
    R: np.ndarray
    measure_minus: np.ndarray  # R⁻ increments, index 0 = R⁻(0)
    measure: np.ndarray        # 𝓡({j}) for j = 0..x_max
    exact: bool
    stderr_minus: np.ndarray | None = None
    stderr: np.ndarray | None = None
    censored_fraction: float = 0.0

    @property
    def x_max(self) -> int:
        return int(self.x[-1])

    def R_beta(self, x, beta: int) -> np.ndarray:
        """R^{(β)}(x) = R(x + β)."""
        idx = np.asarray(x) + beta
        if np.any(idx > self.x_max):
            raise GridTooSmall("renewal grid too small for the shifted argument", x_max=self.x_max)
        return self.R[idx]

    def to_rows(self) -> list[dict]:
        rows = []
        for i, x in enumerate(self.x):
            row = {"x": int(x), "R_minus": float(self.R_minus[i]), "R": float(self.R[i]),
                   "measure_minus": float(self.measure_minus[i]), "measure": float(self.measure[i])}
            if self.stderr_minus is not None:
                row["stderr_minus"] = float(self.stderr_minus[i])
                row["stderr"] = float(self.stderr[i])
            rows.append(row)
        return rows


def annealed_ladder(env: EnvironmentLaw) -> LadderLaws:
    return ladder_laws(annealed_step_measure(env))


def _R_from_measure(meas: np.ndarray) -> np.ndarray:
    # R(x) = Σ_{j<x} 𝓡({j}) for x >= 1, R(0) = 1
    r = np.concatenate([[0.0], np.cumsum(meas)[:-1]])
    r[0] = 1.0
    return r


def renewal_functions(env: EnvironmentLaw, x_max: int, method: str = "exact", trials: int = 2000,
                      rng=None, max_steps: int = 20000, max_censored: float = 0.05) -> RenewalTable:
    """R⁻ and R on 0..x_max, exactly (ladder laws) or by Monte Carlo ladder chains."""
    if x_max < 1:
        raise ValueError("x_max must be at least 1")
    xs = np.arange(x_max + 1)
    if method == "exact":
        lad = annealed_ladder(env)
        u = lad.u_minus(x_max)
        v = lad.v_plus(x_max)
        meas = v.copy()
        meas[0] -= 1.0
        return RenewalTable(xs, np.cumsum(u), _R_from_measure(meas), u, meas, True)
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    return _renewal_mc(env, x_max, trials, rng if rng is not None else RngStream(0), max_steps, max_censored)


def _renewal_mc(env, x_max, trials, rng, max_steps, max_censored) -> RenewalTable:
    gen = as_generator(rng)
    step = annealed_step_measure(env)
    supp = step.support[step.masses > 0]
    cdf = np.cumsum(step.masses[step.masses > 0])
    s = np.zeros(trials, dtype=np.int64)
    lo = np.zeros(trials, dtype=np.int64)
    hi = np.zeros(trials, dtype=np.int64)
    desc = np.zeros((trials, x_max + 1))
    desc[:, 0] = 1.0  # k = 0
    asc = np.zeros((trials, x_max + 1))
    rows = np.arange(trials)
    done_d = np.zeros(trials, bool)
    done_a = np.zeros(trials, bool)
    first = np.ones(trials, bool)
    steps = 0
    while steps < max_steps and not (done_d.all() and done_a.all()):
        k = np.searchsorted(cdf, gen.random(trials) * cdf[-1], side="right")
        s = s + supp[np.minimum(k, supp.size - 1)]
        steps += 1
        new_lo = (s < lo) & ~done_d
        depth = -s[new_lo]
        ok = depth <= x_max
        desc[rows[new_lo][ok], depth[ok]] += 1.0
        lo = np.where(s < lo, s, lo)
        done_d |= lo < -x_max
        new_hi = (s >= hi) & ~done_a
        h = s[new_hi]
        ok = h < x_max
        asc[rows[new_hi][ok], np.maximum(h[ok], 0)] += 1.0
        hi = np.where(new_hi, s, hi)
        done_a |= hi >= x_max
        first[:] = False
    censored = 1.0 - (done_d & done_a).mean()
    if censored > max_censored:
        raise BudgetExceeded("too many ladder chains unfinished within the step budget",
                             censored_fraction=float(censored), max_steps=max_steps)
    rm = np.cumsum(desc, axis=1)
    meas_trials = asc
    r = np.concatenate([np.ones((trials, 1)), np.cumsum(meas_trials, axis=1)[:, :-1]], axis=1)
    r[:, 0] = 1.0
    se = lambda a: a.std(axis=0, ddof=1) / math.sqrt(trials)  # noqa: E731
    return RenewalTable(np.arange(x_max + 1), rm.mean(0), r.mean(0), desc.mean(0), asc.mean(0), False,
                        se(rm), se(r), float(censored))


def brute_force_renewal(env: EnvironmentLaw, x_max: int, max_epochs: int = 200,
                        ladder: LadderLaws | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(R⁻, R) on 0..x_max by explicitly summing over ladder chains.

    The laws of the k-th ladder sums are built by repeated convolution,
    which is independent of the renewal recursions used by the exact
    method.
    """
    lad = ladder if ladder is not None else annealed_ladder(env)
    q = np.concatenate([[0.0], np.asarray(lad.descending)])
    p = np.asarray(lad.ascending)
    rm = np.zeros(x_max + 1)
    cur = np.array([1.0])  # law of the k-th descending sum, k = 0
    for _ in range(max_epochs):
        c = np.zeros(x_max + 1)
        c[:min(cur.size, x_max + 1)] = cur[:x_max + 1]
        rm += np.cumsum(c)
        cur = np.convolve(cur, q)[:x_max + 1]
        if cur.sum() < 1e-300:
            break
    r = np.zeros(x_max + 1)
    cur = p.copy()
    for _ in range(100000):
        c = np.zeros(x_max + 1)
        c[:min(cur.size, x_max + 1)] = cur[:x_max + 1]
        r[1:] += np.cumsum(c)[:-1]
        cur = np.convolve(cur, p)[:x_max + 1]
        if cur.sum() < 1e-18:
            break
    r[0] = 1.0
    return rm, r


def harmonic_identity_Rminus(env: EnvironmentLaw, x_grid: Sequence[int],
                             table: RenewalTable | None = None) -> np.ndarray:
    """|μ^∞[R⁻(x + X) 1{x + X >= 0}] - R⁻(x)| for each x in the grid."""
    step = annealed_step_measure(env)
    need = int(max(x_grid)) + int(step.max_index)
    if table is None:
        table = renewal_functions(env, need)
    elif table.x_max < need:
        raise GridTooSmall("renewal table does not cover the grid plus one step", need=need,
                           x_max=table.x_max)
    out = []
    for x in x_grid:
        terms = [m * table.R_minus[x + int(d)] for d, m in zip(step.support, step.masses)
                 if m > 0 and x + d >= 0]
        out.append(abs(math.fsum(terms) - table.R_minus[x]))
    return np.array(out)


def green_measure(env: EnvironmentLaw, beta: int, x_max: int) -> dict[int, float]:
    """g_β(x) for -β <= x <= x_max (occupation measure of the killed walk, n >= 1)."""
    lad = annealed_ladder(env)
    u = lad.u_minus(beta)
    v = lad.v_plus(x_max + beta)
    out = {}
    for x in range(-beta, x_max + 1):
        terms = [u[z] * v[x + z] for z in range(0, beta + 1) if x + z >= 0]
        g = math.fsum(terms) - (1.0 if x == 0 else 0.0)
        out[x] = g
    return out


def green_diagonal(env: EnvironmentLaw, beta: int, x: int) -> float:
    """Expected visits to x (time 0 included) of the walk started at x, killed below -β."""
    lad = annealed_ladder(env)
    w = x + beta
    u = lad.u_minus(w)
    v = lad.v_plus(w)
    return math.fsum(u[z] * v[z] for z in range(w + 1))


def _support(f: Mapping[int, float]) -> list[int]:
    return sorted(k for k, v in f.items() if v != 0)


def occupation_identity_check(env: EnvironmentLaw, beta: int, f: Mapping[int, float],
                              horizon: int) -> tuple[float, float, float]:
    """(lhs, rhs, bound): lhs = Σ_{n<=N} E[f(S_n); min >= -β] by killed DP,
    rhs = ∫ f dg_β, bound = max f · P(alive at N) · Σ_{x in supp f} G(x, x)."""
    supp = _support(f)
    if not supp:
        return 0.0, 0.0, 0.0
    if min(supp) < -beta:
        raise ValueError("f must vanish below -beta")
    lhs, alive = _killed_occupation(annealed_step_measure(env), beta, f, horizon)
    g = green_measure(env, beta, max(supp))
    rhs = math.fsum(f[x] * g[x] for x in supp)
    fmax = max(abs(f[x]) for x in supp)
    bound = fmax * alive * math.fsum(green_diagonal(env, beta, x) for x in supp)
    return lhs, rhs, bound + 1e-12 * max(1.0, abs(rhs))


def _killed_occupation(step: StepMeasure, beta: int, f: Mapping[int, float], horizon: int):
    dist = LatticeDistribution.delta(step.lattice_step, 0)
    terms = []
    for _ in range(horizon):
        dist, _, _ = killed_propagate(dist, step, beta)
        terms.extend(f[x] * dist.get(x) for x in f)
    return math.fsum(terms), dist.total()


@dataclass(frozen=True)
class OccupationMCResult:
    mc_estimate: float
    stderr: float
    exact_integral: float
    truncated_exact: float
    tail_bound: float
    trials: int
    horizon: int

    @property
    def passed(self) -> bool:
        return abs(self.mc_estimate - self.exact_integral) <= 3 * self.stderr + self.tail_bound

    def to_dict(self) -> dict:
        return {"mc_estimate": self.mc_estimate, "stderr": self.stderr, "exact_integral": self.exact_integral,
                "truncated_exact": self.truncated_exact, "tail_bound": self.tail_bound,
                "trials": self.trials, "horizon": self.horizon, "passed": self.passed}


def occupation_mc_check(env: EnvironmentLaw, beta: int, G: Mapping[int, float], trials: int, horizon: int,
                  rng) -> OccupationMCResult:
    """Monte Carlo of E[Σ_{n<=N} G(ζ_n) U(ξ,β)/U(θⁿξ, ζ_n+β)] under annealed
    environment draws against ∫ G dg_β.

    The horizon tail ∫ G dg_β - Σ_{n<=N} E[G(S_n); min >= -β] is computed
    exactly and added to the tolerance.
    """
    if trials < 2:
        raise BudgetExceeded("need at least two trials")
    supp = _support(G)
    if not supp:
        return OccupationMCResult(0.0, 0.0, 0.0, 0.0, 0.0, trials, horizon)
    hf = harmonic_for(EnvironmentPath(env, 0))
    if not hf.time_independent:
        raise ValueError("occupation_mc_check samples with a time-independent U")
    paths = sample_conditioned_paths(env, beta, horizon, trials, rng, harmonic=hf)
    z = paths[:, 1:]
    lo, hi = supp[0], supp[-1]
    gv = np.zeros(hi - lo + 1)
    for x in supp:
        gv[x - lo] = G[x]
    inside = (z >= lo) & (z <= hi)
    vals = np.where(inside, gv[np.clip(z - lo, 0, hi - lo)], 0.0)
    w = hf.values(np.array([beta]))[0] / hf.values(z + beta)
    per_trial = (vals * w).sum(axis=1)
    mean, se, _ = mean_ci(per_trial)
    g = green_measure(env, beta, hi)
    exact = math.fsum(G[x] * g[x] for x in supp)
    trunc, _ = _killed_occupation(annealed_step_measure(env), beta, G, horizon)
    return OccupationMCResult(mean, se, exact, trunc, max(0.0, exact - trunc), trials, horizon)


def sandwich_ratios(env: EnvironmentLaw, beta: int, intervals: Sequence[tuple[int, int]]) -> list[float]:
    """g_β([a, b)) / (b - a) for each interval, in lattice units."""
    top = max(b for _, b in intervals)
    g = green_measure(env, beta, top)
    return [math.fsum(g[x] for x in range(a, b)) / (b - a) for a, b in intervals]


# ---------------------------------------------------------------- prospective minimum

def prospective_minimum(zeta: Sequence[int], window: int | None = None, rise: int = 0) -> tuple[int | None, bool]:
    """(ν, censored) for an observed path ζ_0..ζ_T.

    ν is the first m >= 1 with ζ_{m+k} >= ζ_m for every observed k >= 0.
    The answer is censored when no such m exists, when fewer than `window`
    steps follow ν, or when the path has not risen `rise` units above ζ_ν.
    """
    z = np.asarray(zeta)
    if z.size < 2:
        return None, True
    suffix_min = np.minimum.accumulate(z[::-1])[::-1]
    cand = np.nonzero(z[1:] <= suffix_min[1:])[0]
    nu = int(cand[0]) + 1
    censored = False
    if window is not None and z.size - 1 - nu < window:
        censored = True
    if z[nu:].max() - z[nu] < rise:
        censored = True
    return nu, censored


# ---------------------------------------------------------------- excursion sampler

@dataclass
class ExcursionSample:
    nu: np.ndarray          # -1 where censored (ν > cap)
    zeta_nu: np.ndarray     # -1 where censored
    post: np.ndarray        # (trials, post_steps) increments ζ_{ν+k} - ζ_ν
    head: np.ndarray        # (trials, keep+1) first values of ζ
    weights: np.ndarray     # U(ξ, 0) / Û
    cap: int
    max_row_deviation: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def uncensored(self) -> np.ndarray:
        return self.nu >= 0

    def features(self) -> dict[str, np.ndarray]:
        ok = self.uncensored
        out = {"nu": self.nu[ok], "zeta_nu": self.zeta_nu[ok]}
        for k in range(self.post.shape[1]):
            out[f"post{k + 1}"] = self.post[ok, k]
        return out


def sample_excursions(source, trials: int, rng, cap: int = 2000, post_steps: int = 3, keep: int = 32,
                      harmonic: HarmonicFunction | None = None) -> ExcursionSample:
    """Exact draws of (ν, ζ_1..ζ_ν, ζ^ν_1..) for the conditioned walk at β = 0.

    Each new running minimum x (over n >= 1) is the prospective minimum
    with probability H(θ^mξ, x, x) = U(0)/U(x).  On success the path
    continues under the transform by U(· - x) (never below x); on failure
    it continues conditioned to enter (-∞, x), i.e. under the transform by
    U(·) - U(· - x).  The path law is that of ζ and ν is read off exactly;
    only ν > cap is censored.
    """
    gen = as_generator(rng)
    law = source.law if isinstance(source, EnvironmentPath) else source
    hf = harmonic if harmonic is not None else harmonic_for(
        source if isinstance(source, EnvironmentPath) else EnvironmentPath(law, 0))
    if not hf.time_independent:
        raise ValueError("the vectorized excursion sampler needs a time-independent U")
    U = hf.values
    tables = StepTables(law)
    total_steps = cap + post_steps
    states = state_matrix(source, trials, total_steps, gen)
    y = np.zeros(trials, dtype=np.int64)
    mode = np.zeros(trials, dtype=np.int8)   # 0 free start, 1 pending, 2 after ν, 3 finished
    level = np.zeros(trials, dtype=np.int64)  # pending level, or ζ_ν after ν
    nu = np.full(trials, -1, dtype=np.int64)
    post = np.zeros((trials, post_steps), dtype=np.int64)
    head = np.zeros((trials, keep + 1), dtype=np.int64)
    worst = 0.0
    u0 = U(np.array([0]))[0]
    for i in range(total_steps):
        act = np.nonzero(mode < 3)[0]
        if act.size == 0:
            break
        m = mode[act]
        lv = level[act]

        def factor(idx, x, tgt, m=m, lv=lv):
            mm = m[idx][:, None]
            L = lv[idx][:, None]
            xx = x[:, None]
            ut = np.where(tgt >= 0, U(np.maximum(tgt, 0)), 0.0)
            free = ut / U(xx)
            ut_shift = np.where(tgt >= L, U(np.maximum(tgt - L, 0)), 0.0)
            pend = (ut - np.where(tgt >= 0, ut_shift, 0.0)) / (U(xx) - U(np.maximum(xx - L, 0)))
            after = ut_shift / U(np.maximum(xx - L, 0))
            return np.where(mm == 0, free, np.where(mm == 1, pend, after))

        with np.errstate(divide="ignore", invalid="ignore"):
            new, dev = draw_weighted(gen, y[act], states[act, i], tables, factor)
        worst = max(worst, dev)
        y[act] = new
        if i + 1 <= keep:
            head[act, i + 1] = new
        # post-ν bookkeeping
        a2 = act[m == 2]
        if a2.size:
            k = i - nu[a2]
            post[a2, k] = y[a2] - level[a2]
            fin = k + 1 >= post_steps
            mode[a2[fin]] = 3
        # new running minima
        a01 = act[m < 2]
        newmin = a01[(mode[a01] == 0) | (y[a01] < level[a01])]
        if newmin.size:
            x = y[newmin]
            succ = gen.random(newmin.size) < u0 / U(x)
            s_idx = newmin[succ]
            nu[s_idx] = i + 1
            level[s_idx] = y[s_idx]
            mode[s_idx] = 2 if post_steps > 0 else 3
            f_idx = newmin[~succ]
            level[f_idx] = y[f_idx]
            mode[f_idx] = 1
        if i + 1 == cap:
            mode[mode == 1] = 3  # censored
    if worst > 1e-10:
        raise ContractViolation("excursion sampler rows do not sum to one", deviation=worst)
    zeta_nu = np.where(nu >= 0, level, -1)
    weights = np.full(trials, hf(0, 0) / u0)
    return ExcursionSample(nu, zeta_nu, post, head, weights, cap, worst)


def first_ascending_law(step: StepMeasure, cap: int) -> tuple[dict[tuple[int, int], float], float]:
    """μ(Γ₁ = k, S_{Γ₁} = x) for k <= cap, and μ(Γ₁ > cap), by DP on the negative half-line."""
    h = step.lattice_step
    dist = LatticeDistribution.delta(h, 0)
    out: dict[tuple[int, int], float] = {}
    for k in range(1, cap + 1):
        moved = LatticeDistribution(h, dist.offset + step.offset, np.convolve(dist.masses, step.masses))
        for x, m in zip(moved.support, moved.masses):
            if x >= 0 and m > 0:
                out[(k, int(x))] = float(m)
        neg = moved.masses[:max(0, -moved.offset)]
        dist = LatticeDistribution(h, moved.offset, neg)
        if dist.masses.size == 0:
            break
    return out, dist.total()


def estimate_U0(law: EnvironmentLaw, draws: int, rng, tol: float = 1e-6) -> tuple[float, float, bool]:
    """Û = E[U(ξ, 0)] by averaging over environment draws: (mean, stderr, exact)."""
    hf = harmonic_for(EnvironmentPath(law, 0))
    if hf.time_independent:
        return hf(0, 0), 0.0, True
    stream = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    vals = []
    for i in range(draws):
        seed = int(stream.substream("U0", i).generator().integers(2**63))
        vals.append(HarmonicFunction(EnvironmentPath(law, seed), tol)(0, 0))
    m, se, _ = mean_ci(vals)
    return m, se, False


@dataclass(frozen=True)
class ExcursionLawReport:
    height: TestReport
    joint: TestReport
    censored_fraction: float
    expected_censored: float
    uncensored: int

    @property
    def passed(self) -> bool:
        return self.height.passed and self.joint.passed

    def to_dict(self) -> dict:
        return {"height": self.height.to_dict(), "joint": self.joint.to_dict(),
                "censored_fraction": self.censored_fraction, "expected_censored": self.expected_censored,
                "uncensored": self.uncensored, "passed": self.passed}


def excursion_law_test(env: EnvironmentLaw, trials: int, rng, cap: int = 2000, joint_k: int = 6,
                       alpha: float = SIGNIFICANCE, min_uncensored: int = 100) -> ExcursionLawReport:
    """Weighted law of ζ_ν (and of (ν, ζ_ν) for ν <= joint_k) under annealed
    environment draws, against the ladder law of S_{Γ₁} under μ^∞.

    Censored draws (ν > cap) form their own cell, compared with μ(Γ₁ > cap).
    """
    if trials <= 0:
        raise TooFewUncensored("no trials requested")
    sample = sample_excursions(env, trials, rng, cap=cap, post_steps=0, keep=0)
    ok = sample.uncensored
    if ok.sum() < min_uncensored:
        raise TooFewUncensored("too few uncensored excursions", uncensored=int(ok.sum()))
    joint, tail = first_ascending_law(annealed_step_measure(env), cap)
    CENS = -1
    height_law: dict[int, float] = {CENS: tail}
    for (k, x), m in joint.items():
        height_law[x] = height_law.get(x, 0.0) + m
    a = chi_square_two_sample(Histogram.from_samples(np.where(ok, sample.zeta_nu, CENS), sample.weights),
                              Histogram.exact(height_law), alpha=alpha)
    xs = sorted({x for (_, x) in joint})
    width = (max(xs) + 1) if xs else 1
    joint_law = {CENS: 1.0 - math.fsum(m for (k, _), m in joint.items() if k <= joint_k)}
    for (k, x), m in joint.items():
        if k <= joint_k:
            joint_law[k * width + x] = m
    codes = np.where(ok & (sample.nu <= joint_k), sample.nu * width + sample.zeta_nu, CENS)
    b = chi_square_two_sample(Histogram.from_samples(codes, sample.weights), Histogram.exact(joint_law),
                              alpha=alpha)
    return ExcursionLawReport(a, b, float(1.0 - ok.mean()), tail, int(ok.sum()))


# ---------------------------------------------------------------- Tanaka identities

def tanaka_identity_check(path: EnvironmentPath, k: int, tol: float = 1e-10,
                          max_paths: int = 10**6) -> tuple[float, dict[int, tuple[float, float]]]:
    """Both sides of U(ξ,0) P_ξ(ν = k, ζ_ν = x) = U(θᵏξ, 0) P_ξ(S_k < S_j for 1 <= j < k, S_k = x)
    for every x >= 0 (ζ_ν is never negative).

    Left: conditioned-kernel DP over (position, running minimum), closed
    by the never-descend factor U(θᵏξ, 0)/U(θᵏξ, x).  Right: enumeration of
    unconditioned step sequences.  Returns (max residual, {x: (lhs, rhs)}).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    steps = [step_measure(path.law_at(i)) for i in range(1, k + 1)]
    per = [[(int(d), float(m)) for d, m in zip(s.support, s.masses) if m > 0] for s in steps]
    count = math.prod(len(p) for p in per)
    if count > max_paths:
        raise EnumerationTooLarge("too many step sequences", count=count)
    hf = harmonic_for(path, tol)
    # left side
    cur = {(0, None): 1.0}
    for i in range(k):
        nxt: dict = {}
        for (x, mn), m in cur.items():
            row = kernel_row(path, i, x, 0, tol, hf)
            for y, p in row.targets.items():
                if i + 1 < k:
                    key = (y, y if mn is None else min(mn, y))
                else:
                    if mn is not None and not y < mn:
                        continue
                    key = (y, None)
                nxt[key] = nxt.get(key, 0.0) + m * p
        cur = nxt
    u_k0 = hf(k, 0)
    lhs = {x: hf(0, 0) * m * u_k0 / hf(k, x) for (x, _), m in cur.items()}
    # right side
    rhs_terms: dict[int, list[float]] = {}
    for combo in itertools.product(*per):
        s = np.cumsum([d for d, _ in combo])
        if k > 1 and not np.all(s[-1] < s[:-1]):
            continue
        x = int(s[-1])
        if x >= 0:
            rhs_terms.setdefault(x, []).append(math.prod(m for _, m in combo))
    rhs = {x: u_k0 * math.fsum(v) for x, v in rhs_terms.items()}
    xs = sorted(set(lhs) | set(rhs))
    table = {x: (lhs.get(x, 0.0), rhs.get(x, 0.0)) for x in xs}
    resid = max((abs(a - b) for a, b in table.values()), default=0.0)
    return resid, table


@dataclass(frozen=True)
class IndependenceReport:
    reports: tuple[tuple[str, str, int, TestReport], ...]  # (feature_a, feature_b, env index, report)
    alpha: float
    corrected_alpha: float
    censored_fractions: tuple[float, ...]
    uncensored: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return all(r.p_value > self.corrected_alpha for *_, r in self.reports)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "corrected_alpha": self.corrected_alpha, "passed": self.passed,
                "censored_fractions": list(self.censored_fractions), "uncensored": list(self.uncensored),
                "tests": [{"feature_a": a, "feature_b": b, "environment": e, **r.to_dict()}
                          for a, b, e, r in self.reports]}


DEFAULT_PAIRS = (("nu", "post1"), ("zeta_nu", "post1"), ("nu", "post2"), ("zeta_nu", "post2"))


def tanaka_independence_test(env: EnvironmentLaw, trials: int, rng, environments: int = 1,
                             pairs: Sequence[tuple[str, str]] = DEFAULT_PAIRS, permutations: int = 999,
                             cap: int = 2000, alpha: float = SIGNIFICANCE,
                             min_uncensored: int = 100) -> IndependenceReport:
    """Permutation tests of independence between pre-ν and post-ν features,
    run separately on each realized environment path (the statement is quenched)."""
    stream = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    out = []
    cens, unc = [], []
    m = len(pairs) * environments
    a_corr = bonferroni(alpha, m)
    if 1.0 / (permutations + 1) >= a_corr:
        raise InvalidConfig("too few permutations to reach the corrected significance level",
                         permutations=permutations, corrected_alpha=a_corr)
    for e in range(environments):
        seed = int(stream.substream("environment", e).generator().integers(2**63))
        path = EnvironmentPath(env, seed)
        post_steps = max([int(n[4:]) for pr in pairs for n in pr if n.startswith("post")] + [1])
        sample = sample_excursions(path, trials, stream.substream("excursions", e), cap=cap,
                                   post_steps=post_steps, keep=0)
        ok = sample.uncensored
        cens.append(float(1.0 - ok.mean()))
        unc.append(int(ok.sum()))
        if ok.sum() < min_uncensored:
            raise TooFewUncensored("too few uncensored excursions", uncensored=int(ok.sum()))
        feats = sample.features()
        for j, (fa, fb) in enumerate(pairs):
            rep = permutation_independence(feats[fa], feats[fb], permutations,
                                           stream.substream("permutation", e, j), alpha=a_corr)
            out.append((fa, fb, e, rep))
    return IndependenceReport(tuple(out), alpha, a_corr, tuple(cens), tuple(unc))


def reconstruct_from_excursions(sample: ExcursionSample, n: int) -> np.ndarray:
    """ζ_n rebuilt by concatenating independent excursions (homogeneous walks).

    Excursion i contributes its values ζ_1..ζ_ν shifted by the running level;
    the first excursion long enough to cover time n supplies ζ_n.
    """
    if sample.head.shape[1] <= n:
        raise ValueError("excursion heads are shorter than the requested time")
    if sample.cap < n:
        raise ValueError("the excursion cap must cover the requested time")
    nu = np.where(sample.nu >= 0, sample.nu, sample.cap + 1)
    out = []
    i = 0
    total = nu.size
    while i < total:
        t, level = 0, 0
        while i < total:
            length = nu[i]
            if t + length >= n:
                out.append(level + sample.head[i, n - t])
                i += 1
                break
            level += sample.zeta_nu[i]
            t += length
            i += 1
    return np.array(out)


# ---------------------------------------------------------------- divergence probe

@dataclass(frozen=True)
class DivergenceReport:
    horizons: tuple[int, ...]
    medians: tuple[float, ...]
    increment_ratio: float  # last increment over first increment of the median partial sums
    loglog_slope: float
    verdict: str            # "growth" or "plateau" (heuristic)

    def to_dict(self) -> dict:
        return {"horizons": list(self.horizons), "medians": list(self.medians),
                "increment_ratio": self.increment_ratio, "loglog_slope": self.loglog_slope,
                "verdict": self.verdict, "heuristic": True}


GROWTH_THRESHOLD = 0.5


def divergence_probe(env: EnvironmentLaw, beta: int, F: Callable[[np.ndarray], np.ndarray], trials: int,
                     horizons: Sequence[int], rng) -> DivergenceReport:
    """Median over trials of Σ_{n<=N} U(ξ,β) F(ζ_n) at each horizon N.

    Horizons should grow geometrically.  The verdict compares the last and
    first increments of the medians: a non-summable series keeps its
    increments, a summable one shrinks them.  Heuristic by nature.
    """
    hs = sorted(int(h) for h in horizons)
    hf = harmonic_for(EnvironmentPath(env, 0))
    paths = sample_conditioned_paths(env, beta, hs[-1], trials, rng, harmonic=hf)
    h = env.lattice_step
    vals = np.asarray(F(h * paths[:, 1:]), dtype=float) * hf.values(np.array([beta]))[0]
    csum = np.cumsum(vals, axis=1)
    med = tuple(float(np.median(csum[:, N - 1])) for N in hs)
    inc = np.diff(med)
    if med[-1] == 0.0 or len(hs) < 3:
        return DivergenceReport(tuple(hs), med, 0.0, 0.0, "plateau")
    ratio = float(inc[-1] / inc[0]) if inc[0] > 0 else 0.0
    slope = float(np.polyfit(np.log(hs), np.log(np.maximum(med, 1e-300)), 1)[0])
    return DivergenceReport(tuple(hs), med, ratio, slope, "growth" if ratio >= GROWTH_THRESHOLD else "plateau")
