"""The walk associated with a boundary-case environment.

Each state ξ defines the step law μ(x) = E_ξ[Σ 1{V = x} e^{-x}].  This
module propagates laws exactly, computes the quenched harmonic function
U(ξ, y) = -E_ξ[S_τ] with a certified error bar, and checks the
many-to-one formula by enumeration.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .env_model import EnvironmentLaw, EnvironmentPath, PointProcessLaw, annealed_step
from .errors import (ContractViolation, EnumerationTooLarge, HorizonExceeded, NotBoundary)
from .ladder import ladder_laws
from .lattice import LatticeDistribution, StepMeasure, killed_propagate
from .tail_series import block_weights

STEP_TOL = 1e-9


@lru_cache(maxsize=256)
def step_measure(state: PointProcessLaw, tol: float = STEP_TOL) -> StepMeasure:
    """μ_ξ as a StepMeasure; raises NotBoundary unless its mass is 1 within tol.

    Tail families have unbounded support; their blocks are kept until the
    remaining mass is below double precision.
    """
    h = state.lattice_step
    acc: dict[int, list[float]] = {}
    for o in state.outcomes:
        for c in o.children:
            acc.setdefault(c, []).append(o.prob * math.exp(-h * c))
    if state.tail is not None:
        for j, v in block_weights(state.tail, h, 1, lambda j: math.exp(-h * j)).items():
            acc.setdefault(j, []).append(v)
    masses = {k: math.fsum(v) for k, v in acc.items()}
    total = math.fsum(masses.values())
    if abs(total - 1.0) > tol:
        raise NotBoundary("step measure mass differs from 1", mass=total)
    return StepMeasure.from_dict(h, masses)


def annealed_step_measure(env: EnvironmentLaw) -> StepMeasure:
    return StepMeasure.from_dict(env.lattice_step, annealed_step(env))


@dataclass(frozen=True)
class HarmonicValue:
    y: int
    value: float
    horizon: int
    error_bound: float
    overshoot: float       # E[overshoot; τ_y <= horizon]
    surviving_mass: float  # P(τ_y > horizon)
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {"y": self.y, "U": self.value, "error_bound": self.error_bound, "horizon": self.horizon,
                "overshoot": self.overshoot, "surviving_mass": self.surviving_mass}


def harmonic_U(path: EnvironmentPath, y: int, tol: float = 1e-8, max_horizon: int = 10000,
               min_horizon: int = 1) -> HarmonicValue:
    """U(ξ, y) by exact killed DP with a certified bracket.

    After n steps, U = U_n + E[g; τ_y > n] where g is the expected overshoot
    from the surviving position.  On the lattice that overshoot lies in
    [Δ, MΔ] (M = largest downward jump of the law), so U sits in
    [U_n + Δ s_n, U_n + MΔ s_n] with s_n = P(τ_y > n).  The midpoint is
    returned with half the bracket width as error bound; for M = 1 the
    bracket is a single point.
    """
    if y < 0:
        raise ValueError("y must be non-negative")
    h = path.law.lattice_step
    m_down = path.law.max_down_jump
    dist = LatticeDistribution.delta(h, 0)
    overshoots: list[float] = []
    killed_total: list[float] = []
    best = None
    for n in range(1, max_horizon + 1):
        dist, ov, km = killed_propagate(dist, step_measure(path.law_at(n)), y)
        overshoots.append(ov)
        killed_total.append(km)
        s = dist.total()
        acc = h * y + math.fsum(overshoots)
        direct = math.fsum(h * (y + dist.support) * dist.masses)
        if abs(direct - acc) > 1e-12 * max(1.0, abs(acc)) * max(1.0, math.sqrt(n)):
            raise ContractViolation("direct and overshoot forms of U_n disagree",
                                    direct=direct, accumulated=acc, horizon=n)
        if abs(s + math.fsum(killed_total) - 1.0) > 1e-12 * max(1.0, math.sqrt(n)):
            raise ContractViolation("killed DP lost mass", horizon=n)
        lower = acc + h * s
        upper = acc + h * m_down * s
        best = HarmonicValue(y, 0.5 * (lower + upper), n, 0.5 * (upper - lower), acc - h * y, s,
                             lower, upper)
        if n >= min_horizon and best.error_bound <= tol:
            return best
    raise HorizonExceeded("bracket for U did not reach the tolerance", best=best,
                          error_bound=best.error_bound, horizon=max_horizon, y=y)


def harmonic_residual(path: EnvironmentPath, y: int, tol: float = 1e-8, beta: int = 0) -> float:
    """|U(ξ, y) - E_ξ[U(θξ, y + S_1); τ_y > 1]| at barrier shift y + beta."""
    y = y + beta
    inner = tol / 10.0
    left = harmonic_U(path, y, inner).value
    step = step_measure(path.law_at(1))
    shifted = path.shift(1)
    terms = [m * harmonic_U(shifted, y + int(x), inner).value
             for x, m in zip(step.support, step.masses) if m > 0 and y + x >= 0]
    return abs(left - math.fsum(terms))


def many_to_one_check(path: EnvironmentPath, n: int, f: Callable[[Sequence[float]], float],
                      a: int = 0, max_terms: int = 10**6) -> tuple[float, float]:
    """Both sides of E[Σ_{|u|=n} f(V(u_1..u_n))] = E[e^{S_n - a} f(S_1..S_n)].

    The left side enumerates, generation by generation, every realized
    outcome of the ancestor and every child choice along one line of
    descent; the right side enumerates walk paths under the step measures.
    """
    h = path.law.lattice_step
    if n == 0:
        v = f(())
        return v, v
    laws = [path.law_at(i) for i in range(1, n + 1)]
    n_lines = math.prod(sum(len(o.children) for o in s.outcomes) for s in laws)
    if n_lines > max_terms:
        raise EnumerationTooLarge("too many lines of descent to enumerate", count=n_lines)
    for s in laws:
        if not s.is_finite:
            raise EnumerationTooLarge("tail families cannot be enumerated")
    lhs_terms = []
    per_gen = [[(o.prob, c) for o in s.outcomes for c in o.children] for s in laws]
    for combo in itertools.product(*per_gen):
        prob = math.prod(p for p, _ in combo)
        pos = a + np.cumsum([c for _, c in combo])
        lhs_terms.append(prob * f(tuple(h * pos)))
    steps = [step_measure(s) for s in laws]
    per_step = [[(int(x), float(m)) for x, m in zip(st.support, st.masses) if m > 0] for st in steps]
    rhs_terms = []
    for combo in itertools.product(*per_step):
        prob = math.prod(m for _, m in combo)
        pos = a + np.cumsum([x for x, _ in combo])
        rhs_terms.append(prob * math.exp(h * (pos[-1] - a)) * f(tuple(h * pos)))
    return math.fsum(lhs_terms), math.fsum(rhs_terms)


class HarmonicFunction:
    """U(θⁿξ, y) on lattice arguments, for kernels and samplers.

    Methods, chosen by `method="auto"`:
      "skip_free"   - downward jumps of one lattice unit: every killed path
                      overshoots by exactly Δ, so U(ξ, y) = Δ(y + 1) for any ξ;
      "homogeneous" - one-state laws: U(y) = E[H]·R⁻(y) from the ladder laws
                      (Wald's identity over the descending ladder);
      "dp"          - harmonic_U per (time, y), cached.
    """

    def __init__(self, path: EnvironmentPath, tol: float = 1e-10, method: str = "auto",
                 max_horizon: int = 10000):
        self.path = path
        self.tol = tol
        self.max_horizon = max_horizon
        law = path.law
        if method == "auto":
            if law.max_down_jump <= 1:
                method = "skip_free"
            elif len(law.states) == 1 and law.is_finite:
                method = "homogeneous"
            else:
                method = "dp"
        self.method = method
        self.h = law.lattice_step
        self._table = None
        self._cache: dict[tuple[int, int], HarmonicValue] = {}
        if method == "homogeneous":
            self._ladder = ladder_laws(step_measure(law.states[0][1]))
            self._grow(256)

    @property
    def time_independent(self) -> bool:
        return self.method in ("skip_free", "homogeneous")

    @property
    def exact(self) -> bool:
        return self.method in ("skip_free", "homogeneous")

    def _grow(self, size: int) -> None:
        u = self._ladder.u_minus(size)
        self._table = self.h * self._ladder.mean_descending * np.cumsum(u)

    def values(self, y) -> np.ndarray:
        """Time-independent evaluation on an array of lattice indices (y >= 0)."""
        y = np.asarray(y, dtype=np.int64)
        if self.method == "skip_free":
            return self.h * (y + 1.0)
        if self.method == "homogeneous":
            top = int(y.max(initial=0))
            if top >= self._table.size:
                self._grow(max(2 * self._table.size, top + 1))
            return self._table[y]
        raise ValueError("values() needs a time-independent method")

    def __call__(self, n: int, y: int) -> float:
        """U(θⁿξ, y) for lattice index y >= 0."""
        if y < 0:
            raise ValueError("U is evaluated at non-negative arguments only")
        if self.time_independent:
            return float(self.values(np.array([y]))[0])
        key = (n, int(y))
        hv = self._cache.get(key)
        if hv is None:
            hv = harmonic_U(self.path.shift(n), int(y), self.tol, self.max_horizon)
            self._cache[key] = hv
        return hv.value

    def error_bound(self, n: int, y: int) -> float:
        if self.exact:
            return 0.0
        self(n, y)
        return self._cache[(n, int(y))].error_bound


@lru_cache(maxsize=512)
def harmonic_for(path: EnvironmentPath, tol: float = 1e-10) -> HarmonicFunction:
    """Shared HarmonicFunction per (path, tol), so caches are reused."""
    return HarmonicFunction(path, tol)
