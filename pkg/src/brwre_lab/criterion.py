"""Moment criterion for non-degeneracy of the derivative martingale limit,
the one-step functional X̃ and probes of the series behind it.

Y = Σ e^{-V(u)} and Z = Σ V(u)e^{-V(u)}1{V(u) >= 0} over one generation.
The limit is non-trivial iff E[Y log²₊Y + Z log₊Z] < ∞.  When it is
infinite, three cases are distinguished:
  (i)   E[Y log²₊Y] = ∞ while E[Y log₊Y] < ∞,
  (ii)  E[Y log₊Y] = ∞,
  (iii) E[Z log₊Z] = ∞.
(iii) may hold together with (i) or (ii); (i) and (ii) exclude each other.

Tail outcome k has Y_k = k e^{-D_k} and Z_k = k D_k e^{-D_k} with
D_k ≈ b log log k, so every moment is a Bertrand series
Σ k^{1-α} (log k)^{m-b} (log log k)^r, decided by comparison with Σ 1/k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .brwre_sim import run_trials
from .conditioned_walk import sample_conditioned_paths, state_matrix
from .env_model import EnvironmentLaw, EnvironmentPath, PointProcessLaw
from .errors import UnsupportedTail
from .quenched_walk import HarmonicFunction, harmonic_for
from .stats_harness import as_generator, wilson_interval
from .tail_series import EXPLICIT_LIMIT, TailFamily, _block_sum, _explicit_grid, bertrand, tail_sum

VACUOUS_NOTE = ("environments have finitely many states, so the almost-sure (quenched) "
                "classification coincides with the annealed one")


@dataclass(frozen=True)
class Moment:
    value: float           # math.inf when divergent
    rate: str = "finite"   # growth of the partial sums up to K when divergent

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_json(self):
        return self.value if self.finite else {"value": "inf", "rate": self.rate}


@dataclass(frozen=True)
class CriterionReport:
    y_log2: Moment
    z_log: Moment
    y_log: Moment
    y_mean: Moment
    cases: dict = field(default_factory=dict)
    note: str = VACUOUS_NOTE

    @property
    def moment(self) -> float:
        return self.y_log2.value + self.z_log.value

    @property
    def classification(self) -> str:
        return "nondegenerate" if self.y_log2.finite and self.z_log.finite else "degenerate"

    def to_dict(self) -> dict:
        return {"E[Y log^2_+ Y]": self.y_log2.to_json(), "E[Z log_+ Z]": self.z_log.to_json(),
                "E[Y log_+ Y]": self.y_log.to_json(), "E[Y]": self.y_mean.to_json(),
                "moment": self.moment if math.isfinite(self.moment) else "inf",
                "classification": self.classification, "cases": dict(self.cases), "note": self.note}


def _outcome_yz(step: float, children: Sequence[int]) -> tuple[float, float]:
    y = math.fsum(math.exp(-step * c) for c in children)
    z = math.fsum(step * c * math.exp(-step * c) for c in children if c >= 0)
    return y, z


def _lp(v: float) -> float:
    return math.log(v) if v > 1.0 else 0.0


def _finite_moments(state: PointProcessLaw) -> tuple[list, list, list, list]:
    y2, zl, yl, ym = [], [], [], []
    for o in state.outcomes:
        y, z = _outcome_yz(state.lattice_step, o.children)
        y2.append(o.prob * y * _lp(y) ** 2)
        zl.append(o.prob * z * _lp(z))
        yl.append(o.prob * y * _lp(y))
        ym.append(o.prob * y)
    return y2, zl, yl, ym


def _tail_classes(tail: TailFamily) -> dict[str, tuple[bool, str]]:
    # s = α-1 on the k power; the log k exponent is b - m; Z carries one extra log log k
    s, b = tail.alpha - 1.0, tail.loglog_coeff
    return {"y_mean": bertrand(s, b), "y_log": bertrand(s, b - 1.0),
            "y_log2": bertrand(s, b - 2.0), "z_log": bertrand(s, b - 1.0, -1.0)}


def _tail_value(tail: TailFamily, step: float, name: str) -> float:
    """Finite tail moment: block series for k >= 2^20 plus an explicit clamped sum below."""
    k, d, logk = _explicit_grid(tail, step)
    y_log = logk - d  # log Y_k
    u = math.log(EXPLICIT_LIMIT)
    if u - tail.loglog_coeff * math.log(u) <= 1.0 or u <= tail.loglog_coeff:
        raise UnsupportedTail("log Y_k is not yet increasing at the explicit limit", b=tail.loglog_coeff)
    if name == "y_mean":
        coeffs, exact = (lambda D: [math.exp(-D)]), np.exp(-d)
    elif name == "y_log":
        coeffs, exact = (lambda D: [-D * math.exp(-D), math.exp(-D)]), np.exp(-d) * np.maximum(y_log, 0)
    elif name == "y_log2":
        coeffs = lambda D: [D * D * math.exp(-D), -2 * D * math.exp(-D), math.exp(-D)]
        exact = np.exp(-d) * np.maximum(y_log, 0) ** 2
    else:
        def coeffs(D):
            if D <= 0:
                return [0.0]
            return [D * math.exp(-D) * (math.log(D) - D), D * math.exp(-D)]
        with np.errstate(divide="ignore", invalid="ignore"):
            z_log = np.where(d > 0, logk + np.log(np.where(d > 0, d, 1.0)) - d, 0.0)
        exact = np.where(d > 0, d * np.exp(-d) * np.maximum(z_log, 0), 0.0)
    full = tail_sum(tail, step, 1, coeffs)
    raw = np.zeros_like(k)
    for dv in np.unique(d):
        sel = d == dv
        raw[sel] = np.polynomial.polynomial.polyval(logk[sel], coeffs(float(dv)))
    z = tail.normalizer()
    # swap the unclamped explicit part for the clamped one
    return full + tail.weight / z * (math.fsum(k ** -(tail.alpha - 1) * exact) - math.fsum(k ** -(tail.alpha - 1) * raw))


def moment_criterion(env: EnvironmentLaw) -> CriterionReport:
    names = ("y_log2", "z_log", "y_log", "y_mean")
    terms: dict[str, list[float]] = {n: [] for n in names}
    rates: dict[str, str] = {}
    for w, state in env.states:
        for n, vals in zip(names, _finite_moments(state)):
            terms[n].extend(w * v for v in vals)
        if state.tail is not None:
            for n, (ok, rate) in _tail_classes(state.tail).items():
                if ok:
                    terms[n].append(w * _tail_value(state.tail, state.lattice_step, n))
                else:
                    rates[n] = rate
    m = {n: Moment(math.inf, rates[n]) if n in rates else Moment(math.fsum(terms[n])) for n in names}
    infinite_y2 = not m["y_log2"].finite
    cases = {"i": infinite_y2 and m["y_log"].finite, "ii": not m["y_log"].finite,
             "iii": not m["z_log"].finite}
    return CriterionReport(m["y_log2"], m["z_log"], m["y_log"], m["y_mean"], cases)


# ---------------------------------------------------------------- X̃

def tilde_x(path: EnvironmentPath, n: int, x: int, beta: int, children: Sequence[int],
            harmonic: HarmonicFunction | None = None) -> float:
    """X̃ for one realized outcome of the particle at lattice index x, time n."""
    if x < -beta:
        raise ValueError("x must be >= -beta")
    hf = harmonic if harmonic is not None else harmonic_for(path)
    h = path.law.lattice_step
    num = math.fsum(hf(n + 1, x + d + beta) * math.exp(-h * d) for d in children if x + d >= -beta)
    return num / hf(n, x + beta)


@lru_cache(maxsize=64)
def _prefix(s: float) -> np.ndarray:
    k = np.arange(1, EXPLICIT_LIMIT + 1, dtype=float)
    return np.concatenate([[0.0], np.cumsum(k ** -s)])


def _first_at_least(u: float) -> int:
    # smallest integer k with log k >= u, robust to exp/log round-off
    k = math.ceil(math.exp(u))
    while k > 1 and math.log(k - 1) >= u:
        k -= 1
    while math.log(k) < u:
        k += 1
    return k


def _range_sum(s: float, ulo: float, uhi: float) -> float:
    """Σ k^{-s} over integers k with log k in [ulo, uhi)."""
    if uhi <= ulo:
        return 0.0
    lim = math.log(EXPLICIT_LIMIT)
    out = 0.0
    if ulo < lim:
        lo = _first_at_least(ulo)
        hi = _first_at_least(min(uhi, lim))
        lo, hi = max(lo, 1), min(hi, EXPLICIT_LIMIT + 1)
        if hi > lo:
            p = _prefix(s)
            out += p[hi - 1] - p[lo - 1]
        ulo = lim
    if uhi > ulo:
        out += _block_sum(s, [1.0], ulo, uhi)
    return out


def _tail_block_bounds(tail: TailFamily, step: float, j: int) -> tuple[float, float]:
    """log k range of the tail outcomes placed at displacement index j."""
    b = tail.loglog_coeff
    lo = math.exp((j - 0.5) * step / b)
    hi = math.exp((j + 0.5) * step / b)
    return max(lo, math.log(tail.k_min)), hi


def _tail_series(state: PointProcessLaw, x: int, beta: int, hf: HarmonicFunction, n: int,
                 variant: str, c: float, rel_tol: float = 1e-16) -> float:
    """Tail part of E[X̃ g] with g = 1{Q >= c} (degenerate) or Q ∧ 1 (L1),
    where Q = U e^{-x} X̃ = k U(x+j+β) e^{-(x+j)} on block j."""
    tail, h = state.tail, state.lattice_step
    z = tail.normalizer()
    base = hf(n, x + beta)
    s1 = tail.alpha - 1.0
    j = int(tail.displacement_index(tail.k_min, h))
    parts = []
    for _ in range(100000):
        ulo, uhi = _tail_block_bounds(tail, h, j)
        if ulo >= uhi:
            j += 1
            continue
        ux = hf(n + 1, x + j + beta)
        logA = math.log(ux) - h * (x + j)   # log of Q / k
        pref = ux * math.exp(-h * j) / base
        if variant == "degenerate":
            cut = math.log(c) - logA if c > 0 else -math.inf
            term = pref * _range_sum(s1, max(ulo, cut), uhi)
        else:
            cut = -logA
            below = _range_sum(tail.alpha - 2.0, ulo, min(uhi, cut)) if cut > ulo else 0.0
            term = pref * (math.exp(logA) * below + _range_sum(s1, max(ulo, cut), uhi))
        parts.append(term)
        total = math.fsum(parts)
        if ulo > 2.0 and ulo > cut and term <= rel_tol * max(total, 1e-300):
            break
        j += 1
    return tail.weight / z * math.fsum(parts)


def series_term(path: EnvironmentPath, n: int, x: int, beta: int, variant: str = "L1", c: float = 1.0,
                harmonic: HarmonicFunction | None = None) -> float:
    """E over the outcome at time n+1 of X̃·((U e^{-x} X̃) ∧ 1) or X̃·1{U e^{-x} X̃ >= c}."""
    hf = harmonic if harmonic is not None else harmonic_for(path)
    h = path.law.lattice_step
    state = path.law_at(n + 1)
    scale = hf(n, x + beta) * math.exp(-h * x)
    terms = []
    for o in state.outcomes:
        tx = tilde_x(path, n, x, beta, o.children, hf)
        q = scale * tx
        g = min(q, 1.0) if variant == "L1" else float(q >= c)
        terms.append(o.prob * tx * g)
    if state.tail is not None:
        terms.append(_tail_series(state, x, beta, hf, n, variant, c))
    return math.fsum(terms)


def expected_tilde_x(path: EnvironmentPath, n: int, x: int, beta: int) -> float:
    """E over outcomes of X̃; equals 1 by harmonicity."""
    return series_term(path, n, x, beta, "degenerate", 0.0)


@dataclass(frozen=True)
class SeriesProbeReport:
    variant: str
    c: float
    horizons: tuple[int, ...]
    means: tuple[float, ...]
    medians: tuple[float, ...]
    increment_slope: float   # log-log slope of mean increments over doubling windows
    verdict: str             # "growth" or "plateau" (heuristic)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "c": self.c, "horizons": list(self.horizons),
                "means": list(self.means), "medians": list(self.medians),
                "increment_slope": self.increment_slope, "verdict": self.verdict, "heuristic": True}


# A summable series along the conditioned walk has window increments decaying
# like N^{-1/2} or faster; a divergent one keeps them flat or growing.
SLOPE_THRESHOLD = -0.25


def series_probe(env: EnvironmentLaw, beta: int, trials: int, horizon: int, variant: str = "L1",
                 c: float = 1.0, rng=None, checkpoints: int = 6) -> SeriesProbeReport:
    """Partial sums Σ_{n<=N} U(ξ,β)·E_{ζ_n}[...] along sampled conditioned paths.

    Each trial carries its own i.i.d. environment; the inner expectation is
    exact over the outcomes of ξ_{n+1} (tail blocks included).
    """
    if variant not in ("L1", "degenerate"):
        raise ValueError(f"unknown variant {variant!r}")
    if c < 1 and variant == "degenerate":
        raise ValueError("c must be >= 1")
    gen = as_generator(rng)
    hf = harmonic_for(EnvironmentPath(env, 0))
    states = state_matrix(env, trials, horizon + 1, gen)
    paths = sample_conditioned_paths(env, beta, horizon, trials, gen, harmonic=hf, states=states[:, :horizon])
    u0 = hf(0, beta)
    singles = [EnvironmentPath(EnvironmentLaw.homogeneous(st), 0) for _, st in env.states]
    memo: dict[tuple[int, int], float] = {}
    sums = np.zeros((trials, horizon))
    for t in range(trials):
        for n in range(1, horizon + 1):
            key = (int(states[t, n]), int(paths[t, n]))
            if key not in memo:
                # U is time independent, so a one-state path at the right state suffices
                memo[key] = series_term(singles[key[0]], 0, key[1], beta, variant, c, hf)
            sums[t, n - 1] = memo[key] * u0
    csum = np.cumsum(sums, axis=1)
    hs = sorted({max(1, horizon // 2 ** i) for i in range(checkpoints)})
    means = tuple(float(csum[:, N - 1].mean()) for N in hs)
    med = tuple(float(np.median(csum[:, N - 1])) for N in hs)
    inc = np.diff(means)
    if len(hs) < 3 or not np.all(inc > 0):
        # an increment of exactly zero means the terms vanished
        slope = -math.inf if np.any(inc <= 0) else 0.0
    else:
        slope = float(np.polyfit(np.log(hs[1:]), np.log(inc), 1)[0])
    return SeriesProbeReport(variant, c, tuple(hs), means, med, slope,
                             "growth" if slope >= SLOPE_THRESHOLD else "plateau")


@dataclass(frozen=True)
class DInfinityReport:
    beta: int | None             # None for D_n itself, else D_n^{(β)}
    horizon: int
    trials: int
    median_abs_change: float     # median |D_N - D_{N/2}|
    positive_fraction: float     # fraction with D_N > eps
    ci: tuple[float, float]
    median_abs_D: tuple[float, ...]
    eps: float

    @property
    def excludes_zero(self) -> bool:
        return self.ci[0] > 0.0

    def to_dict(self) -> dict:
        return {"beta": self.beta, "horizon": self.horizon, "trials": self.trials,
                "median_abs_change": self.median_abs_change, "positive_fraction": self.positive_fraction,
                "ci": list(self.ci), "ci_excludes_zero": self.excludes_zero,
                "median_abs_D": list(self.median_abs_D), "eps": self.eps}


def d_infinity_probe(env: EnvironmentLaw, betas: Sequence[int] = (0,), trials: int = 500, horizon: int = 40,
                     seed: int = 0, threads: int = 1, eps: float = 1e-2) -> list[DInfinityReport]:
    """Diagnostics of D_n near the horizon.  Reports only: a degenerate limit
    is an almost-sure statement that no finite run can confirm."""
    res = run_trials(env, trials, horizon, list(betas), seed, threads)
    half = horizon // 2
    out = []
    for beta in [None, *betas]:
        traj = np.array([[r.D if beta is None else r.D_beta[beta] for r in rows] for rows in res])
        pos = int((traj[:, horizon] > eps).sum())
        med = tuple(float(v) for v in np.median(np.abs(traj), axis=0))
        out.append(DInfinityReport(beta, horizon, trials,
                                   float(np.median(np.abs(traj[:, horizon] - traj[:, half]))),
                                   pos / trials, wilson_interval(pos, trials), med, eps))
    return out
