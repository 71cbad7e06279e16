"""Environment state laws, the standing assumptions and boundary normalization.

All displacements are integer lattice indices; the real displacement of
index d is ``lattice_step * d``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (InvalidConfig, InvalidLaw, LatticeIncompatible, NoCommonTiltPoint,
                     NonFinite, UnsupportedTail)
from .stats_harness import RngStream
from .tail_series import TailFamily, bertrand, tail_sum

PROB_TOL = 1e-12
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class Outcome:
    prob: float
    children: tuple[int, ...]


@dataclass(frozen=True)
class PointProcessLaw:
    """One environment state: a law over finite multisets of displacements,
    optionally completed by a countable power tail."""

    lattice_step: float
    outcomes: tuple[Outcome, ...]
    tail: TailFamily | None = None

    def __post_init__(self):
        if not (self.lattice_step > 0 and math.isfinite(self.lattice_step)):
            raise InvalidLaw("lattice_step must be a positive real")
        outs = tuple(o if isinstance(o, Outcome) else Outcome(float(o[0]), tuple(int(c) for c in o[1]))
                     for o in self.outcomes)
        object.__setattr__(self, "outcomes", outs)
        for o in outs:
            if not (0.0 < o.prob <= 1.0):
                raise InvalidLaw("outcome probabilities must lie in (0, 1]", prob=o.prob)
            if len(o.children) == 0:
                raise InvalidLaw("every outcome needs at least one child (non-extinction)")
        total = math.fsum([o.prob for o in outs] + ([self.tail.weight] if self.tail else []))
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidLaw("outcome probabilities must sum to 1", total=total)
        if self.tail is None and not outs:
            raise InvalidLaw("a law needs at least one outcome")

    @property
    def is_finite(self) -> bool:
        return self.tail is None

    @property
    def max_children(self) -> float:
        if self.tail is not None:
            return math.inf
        return max(len(o.children) for o in self.outcomes)

    @property
    def min_displacement(self) -> int:
        lo = min((min(o.children) for o in self.outcomes), default=None)
        if self.tail is not None:
            d0 = int(self.tail.displacement_index(self.tail.k_min, self.lattice_step))
            lo = d0 if lo is None else min(lo, d0)
        return lo

    def reversed(self) -> "PointProcessLaw":
        return PointProcessLaw(self.lattice_step, tuple(reversed(self.outcomes)), self.tail)


@dataclass(frozen=True)
class EnvironmentLaw:
    """I.i.d.-over-time law of the environment: a finite list of weighted states."""

    states: tuple[tuple[float, PointProcessLaw], ...]

    def __post_init__(self):
        states = tuple((float(p), s) for p, s in self.states)
        object.__setattr__(self, "states", states)
        if not states:
            raise InvalidLaw("an environment needs at least one state")
        if any(p <= 0 for p, _ in states):
            raise InvalidLaw("state probabilities must be positive")
        if abs(math.fsum(p for p, _ in states) - 1.0) > PROB_TOL:
            raise InvalidLaw("state probabilities must sum to 1")
        steps = {s.lattice_step for _, s in states}
        if len(steps) != 1:
            raise InvalidLaw("all states must share one lattice step", steps=sorted(steps))

    @classmethod
    def homogeneous(cls, state: PointProcessLaw) -> "EnvironmentLaw":
        return cls(((1.0, state),))

    @property
    def lattice_step(self) -> float:
        return self.states[0][1].lattice_step

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for p, _ in self.states])

    @property
    def laws(self) -> tuple[PointProcessLaw, ...]:
        return tuple(s for _, s in self.states)

    @property
    def is_finite(self) -> bool:
        return all(s.is_finite for _, s in self.states)

    @property
    def max_down_jump(self) -> int:
        """Largest downward displacement over all states, in lattice units."""
        return max(0, -min(s.min_displacement for _, s in self.states))

    def sample_states(self, rng: np.random.Generator, size) -> np.ndarray:
        if len(self.states) == 1:
            return np.zeros(size, dtype=np.int64)
        cum = np.cumsum(self.probs)
        return np.minimum(np.searchsorted(cum, rng.random(size), side="right"), len(cum) - 1)


_CHUNK = 4096


@lru_cache(maxsize=1024)
def _realize_chunk(cum: tuple[float, ...], seed: int, chunk: int) -> np.ndarray:
    gen = RngStream(seed, 0x454E56, chunk * (1 << 32)).generator()
    u = gen.random(_CHUNK)
    idx = np.searchsorted(np.asarray(cum), u, side="right")
    out = np.minimum(idx, len(cum) - 1).astype(np.int64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EnvironmentPath:
    """A realized environment ξ_1, ξ_2, ... drawn from `law` with `seed`.

    States are realized lazily and deterministically in chunks, so the
    path is effectively infinite.  `offset` counts applied shifts θ.
    """

    law: EnvironmentLaw
    seed: int = 0
    offset: int = 0

    def shift(self, k: int = 1) -> "EnvironmentPath":
        if k < 0:
            raise ValueError("shift must be non-negative")
        return EnvironmentPath(self.law, self.seed, self.offset + k)

    def state(self, i: int) -> int:
        """Index of the state ξ_i (i >= 1) of the shifted path."""
        if i < 1:
            raise ValueError("environment times start at 1")
        if len(self.law.states) == 1:
            return 0
        t = self.offset + i - 1
        cum = tuple(np.cumsum(self.law.probs).tolist())
        return int(_realize_chunk(cum, self.seed, t // _CHUNK)[t % _CHUNK])

    def states(self, n: int) -> np.ndarray:
        """Realized prefix ξ_1..ξ_n as state indices."""
        if len(self.law.states) == 1:
            return np.zeros(n, dtype=np.int64)
        cum = tuple(np.cumsum(self.law.probs).tolist())
        out = np.empty(n, dtype=np.int64)
        t0 = self.offset
        pos = 0
        while pos < n:
            t = t0 + pos
            chunk = _realize_chunk(cum, self.seed, t // _CHUNK)
            take = min(n - pos, _CHUNK - t % _CHUNK)
            out[pos:pos + take] = chunk[t % _CHUNK: t % _CHUNK + take]
            pos += take
        return out

    def law_at(self, i: int) -> PointProcessLaw:
        return self.law.states[self.state(i)][1]


# ---------------------------------------------------------------- transforms

def _finite_terms(state: PointProcessLaw):
    """Flattened (prob, real displacement) pairs, one per child."""
    step = state.lattice_step
    return [(o.prob, step * c) for o in state.outcomes for c in o.children]


def log_laplace(state: PointProcessLaw, t: float) -> float:
    """Ψ(t) = log E[Σ_children e^{-t V}]."""
    terms = [p * math.exp(-t * v) for p, v in _finite_terms(state)]
    if state.tail is not None:
        tail = state.tail
        if tail.alpha == 2.0:
            ok, _ = bertrand(1.0, t * tail.loglog_coeff)
            if not ok:
                raise NonFinite("tail family has an infinite Laplace transform at t", t=t)
        terms.append(tail_sum(tail, state.lattice_step, 1, lambda d: [math.exp(-t * d)]))
    total = math.fsum(terms)
    if not (total > 0 and math.isfinite(total)):
        raise NonFinite("Laplace transform is not finite and positive", t=t)
    return math.log(total)


def log_laplace_derivative(state: PointProcessLaw, t: float) -> float:
    """Ψ'(t) = -E[Σ V e^{-tV}] / E[Σ e^{-tV}]."""
    num = [-p * v * math.exp(-t * v) for p, v in _finite_terms(state)]
    den = [p * math.exp(-t * v) for p, v in _finite_terms(state)]
    if state.tail is not None:
        tail, step = state.tail, state.lattice_step
        num.append(-tail_sum(tail, step, 1, lambda d: [d * math.exp(-t * d)]))
        den.append(tail_sum(tail, step, 1, lambda d: [math.exp(-t * d)]))
    return math.fsum(num) / math.fsum(den)


def tilted_mean(state: PointProcessLaw) -> float:
    """E[Σ V e^{-V}], the second boundary quantity."""
    terms = [p * v * math.exp(-v) for p, v in _finite_terms(state)]
    if state.tail is not None:
        terms.append(tail_sum(state.tail, state.lattice_step, 1, lambda d: [d * math.exp(-d)]))
    return math.fsum(terms)


@dataclass(frozen=True)
class BoundaryReport:
    tol: float
    residuals: tuple[tuple[float, float], ...]  # per state: (Ψ(1), E Σ V e^{-V})

    @property
    def passed(self) -> bool:
        return all(abs(a) <= self.tol and abs(b) <= self.tol for a, b in self.residuals)

    @property
    def max_residual(self) -> float:
        return max(max(abs(a), abs(b)) for a, b in self.residuals)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol, "max_residual": self.max_residual,
                "states": [{"log_laplace_at_1": a, "tilted_mean": b} for a, b in self.residuals]}


def boundary_check(env: EnvironmentLaw, tol: float = BOUNDARY_TOL) -> BoundaryReport:
    res = []
    for _, s in env.states:
        # residual of the first condition is reported as Σ e^{-V} - 1 so that
        # the deterministic (+1,-1) law reports |1 - (e^{-1} + e)|
        mass = math.exp(log_laplace(s, 1.0))
        res.append((mass - 1.0, tilted_mean(s)))
    return BoundaryReport(tol, tuple(res))


def tilt_point(state: PointProcessLaw, lo: float = 1e-6, hi: float = 50.0) -> float:
    """Root of Ψ(t) = tΨ'(t) for one state."""
    def g(t):
        return log_laplace(state, t) - t * log_laplace_derivative(state, t)
    grid = np.geomspace(lo, hi, 400)
    vals = [g(t) for t in grid]
    for a, b, va, vb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if va == 0.0:
            return float(a)
        if va * vb < 0:
            return float(brentq(g, a, b, xtol=1e-14, rtol=1e-14))
    raise NoCommonTiltPoint("no solution of Ψ(t) = tΨ'(t) in the search range")


def _lattice_for(values: Sequence[float], base: float, max_refine: int, min_step: float) -> float:
    for q in range(1, max_refine + 1):
        step = base / q
        if step < min_step:
            break
        if all(abs(v / step - round(v / step)) <= 1e-9 * max(1.0, abs(v / step)) for v in values):
            return step
    raise LatticeIncompatible("transformed displacements fit no admissible lattice",
                              base=base, max_refine=max_refine)


def boundary_normalize(env: EnvironmentLaw, t_star: float, tol: float = 1e-9,
                       max_refine: int = 64, min_step: float = 1e-6) -> EnvironmentLaw:
    """Replace every displacement x of state s by t*·x + Ψ_s(t*)."""
    if not t_star > 0:
        raise ValueError("t_star must be positive")
    for _, s in env.states:
        if not s.is_finite:
            raise UnsupportedTail("boundary normalization only handles finite laws")
    shifts = []
    for _, s in env.states:
        psi = log_laplace(s, t_star)
        gap = psi - t_star * log_laplace_derivative(s, t_star)
        if abs(gap) > tol:
            roots = []
            for _, s2 in env.states:
                try:
                    roots.append(tilt_point(s2))
                except NoCommonTiltPoint:
                    roots.append(None)
            raise NoCommonTiltPoint("Ψ(t*) != t*Ψ'(t*) for some state", t_star=t_star,
                                    gap=gap, per_state_roots=roots)
        shifts.append(psi)
    old = env.lattice_step
    base = t_star * old
    step = _lattice_for(shifts, base, max_refine, min_step)
    ratio = round(base / step)
    states = []
    for (p, s), psi in zip(env.states, shifts):
        c = int(round(psi / step))
        outs = tuple(Outcome(o.prob, tuple(ratio * ch + c for ch in o.children)) for o in s.outcomes)
        states.append((p, PointProcessLaw(step, outs)))
    return EnvironmentLaw(tuple(states))


# ---------------------------------------------------------------- assumptions

@dataclass(frozen=True)
class AssumptionReport:
    non_extinction: bool
    branching_somewhere: bool
    positive_displacement_mass: tuple[bool, ...]
    delta: float
    moment: float
    moment_finite: bool
    boundary: BoundaryReport

    @property
    def passed(self) -> bool:
        return (self.non_extinction and self.branching_somewhere
                and all(self.positive_displacement_mass) and self.moment_finite
                and self.boundary.passed)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "non_extinction": self.non_extinction,
            "branching_somewhere": self.branching_somewhere,
            "positive_displacement_mass": list(self.positive_displacement_mass),
            "moment_delta": self.delta,
            "moment_value": self.moment if math.isfinite(self.moment) else "inf",
            "moment_finite": self.moment_finite,
            "boundary": self.boundary.to_dict(),
        }


def _abs_moment(state: PointProcessLaw, power: float) -> float:
    terms = [p * abs(v) ** power * math.exp(-v) for p, v in _finite_terms(state)]
    if state.tail is not None:
        t = state.tail
        if t.alpha == 2.0 and not bertrand(1.0, t.loglog_coeff)[0]:
            return math.inf
        terms.append(tail_sum(t, state.lattice_step, 1, lambda d: [abs(d) ** power * math.exp(-d)]))
    return math.fsum(terms)


def validate_assumptions(env: EnvironmentLaw, delta: float = 1.0,
                         tol: float = BOUNDARY_TOL) -> AssumptionReport:
    """Check non-extinction, non-triviality and the (2+δ)-moment condition.

    The moment uses |V|^{2+δ}, the natural reading for negative V.
    """
    non_ext = all(len(o.children) >= 1 for _, s in env.states for o in s.outcomes)
    branching = any(s.max_children > 1 for _, s in env.states)
    positive = []
    for _, s in env.states:
        mass = math.fsum(p * math.exp(-v) for p, v in _finite_terms(s) if v > 0)
        # tail displacements grow like log log k, so the tail always has children above 0
        positive.append(mass > 0 or s.tail is not None)
    moment = math.fsum(p * _abs_moment(s, 2.0 + delta) for p, s in env.states)
    return AssumptionReport(non_ext, branching, tuple(positive), delta, moment,
                            math.isfinite(moment), boundary_check(env, tol))


# ---------------------------------------------------------------- recipes

def randomized_boundary_state(step_masses: dict[int, float], lattice_step: float = 1.0) -> PointProcessLaw:
    """A boundary state whose step measure is `step_masses`.

    The number of children at displacement x is floor(m) or floor(m)+1 with
    mean m = μ(x)·e^{x}, independently over x.
    """
    choices = []
    for x, mu in sorted(step_masses.items()):
        m = mu * math.exp(lattice_step * x)
        lo = math.floor(m)
        frac = m - lo
        opts = [(1.0 - frac, lo)] if frac < 1e-15 else [(1.0 - frac, lo), (frac, lo + 1)]
        choices.append((x, [(p, k) for p, k in opts if p > 0]))
    outcomes = []

    def rec(i, prob, kids):
        if i == len(choices):
            if not kids:
                raise InvalidLaw("recipe produces an outcome without children")
            outcomes.append(Outcome(prob, tuple(kids)))
            return
        x, opts = choices[i]
        for p, k in opts:
            rec(i + 1, prob * p, kids + [x] * k)

    rec(0, 1.0, [])
    return PointProcessLaw(lattice_step, tuple(outcomes))


def pm1_boundary_state() -> PointProcessLaw:
    """K_{+1} ∈ {1,2} and K_{-1} ∈ {0,1} independent, giving a fair ±1 step."""
    return randomized_boundary_state({1: 0.5, -1: 0.5})


def correlated_pm1_state() -> PointProcessLaw:
    """Same fair ±1 step measure as `pm1_boundary_state` with dependent counts."""
    e = math.e
    c = 1.0 / (2.0 * e)
    b = e / 2.0 - 1.0
    a = 1.0 - b - c
    return PointProcessLaw(1.0, (Outcome(a, (1,)), Outcome(b, (1, 1)), Outcome(c, (1, -1))))


def skewed_state() -> PointProcessLaw:
    """Step {-1: 2/3, +2: 1/3}: mean zero, downward jumps of one unit."""
    return randomized_boundary_state({-1: 2.0 / 3.0, 2: 1.0 / 3.0})


def two_down_state() -> PointProcessLaw:
    """Step {-2: 1/3, +1: 2/3}: mean zero with two-unit downward jumps."""
    return randomized_boundary_state({-2: 1.0 / 3.0, 1: 2.0 / 3.0})


def power_tail_state(alpha: float = 2.0, loglog_coeff: float = 2.5, k_min: int = 3,
                     lattice_step: float = 1.0, max_up: int = 6) -> PointProcessLaw:
    """Boundary state made of the power tail plus two balancing outcomes
    (one child at -1 and one child at +L), solved from the two boundary
    equations and total probability."""
    probe = TailFamily(1.0, alpha, loglog_coeff, k_min)
    a = tail_sum(probe, lattice_step, 1, lambda d: [math.exp(-d)])
    b = tail_sum(probe, lattice_step, 1, lambda d: [d * math.exp(-d)])
    h = lattice_step
    for up in range(1, max_up + 1):
        L = up * h
        mat = np.array([[1.0, 1.0, 1.0],
                        [a, math.exp(h), math.exp(-L)],
                        [b, -h * math.exp(h), L * math.exp(-L)]])
        w, q1, q2 = np.linalg.solve(mat, np.array([1.0, 1.0, 0.0]))
        if w > 0 and q1 > 0 and q2 > 0:
            # absorb the rounding of the solve into the largest balancing weight
            q2 = 1.0 - w - q1
            return PointProcessLaw(lattice_step, (Outcome(float(q1), (-1,)), Outcome(float(q2), (up,))),
                                   TailFamily(float(w), alpha, loglog_coeff, k_min))
    raise InvalidLaw("no positive balancing solution for the tail family")


def deterministic_pm1_state() -> PointProcessLaw:
    return PointProcessLaw(1.0, (Outcome(1.0, (1, -1)),))


def pm1_environment() -> EnvironmentLaw:
    return EnvironmentLaw.homogeneous(pm1_boundary_state())


def two_state_same_step() -> EnvironmentLaw:
    return EnvironmentLaw(((0.5, pm1_boundary_state()), (0.5, correlated_pm1_state())))


def two_state_different_step() -> EnvironmentLaw:
    return EnvironmentLaw(((0.5, pm1_boundary_state()), (0.5, skewed_state())))


def two_down_environment() -> EnvironmentLaw:
    return EnvironmentLaw(((0.5, pm1_boundary_state()), (0.5, two_down_state())))


# ---------------------------------------------------------------- JSON

_TOP_KEYS = {"lattice_step", "states"}
_STATE_KEYS = {"prob", "outcomes", "tail"}
_OUTCOME_KEYS = {"prob", "children"}
_TAIL_KEYS = {"family", "weight", "alpha", "loglog_coeff", "k_min"}


def _check_keys(obj, allowed: set, where: str):
    if not isinstance(obj, dict):
        raise InvalidConfig(f"{where} must be an object")
    extra = set(obj) - allowed
    if extra:
        raise InvalidConfig(f"unknown keys in {where}", keys=sorted(extra))


def environment_from_dict(cfg: dict) -> EnvironmentLaw:
    _check_keys(cfg, _TOP_KEYS, "environment")
    if "lattice_step" not in cfg or "states" not in cfg:
        raise InvalidConfig("environment needs 'lattice_step' and 'states'")
    step = float(cfg["lattice_step"])
    states = []
    try:
        for i, st in enumerate(cfg["states"]):
            _check_keys(st, _STATE_KEYS, f"states[{i}]")
            outs = []
            for j, o in enumerate(st.get("outcomes", [])):
                _check_keys(o, _OUTCOME_KEYS, f"states[{i}].outcomes[{j}]")
                kids = o["children"]
                if any(not isinstance(c, int) or isinstance(c, bool) for c in kids):
                    raise InvalidConfig("children must be integer lattice indices",
                                        where=f"states[{i}].outcomes[{j}]")
                outs.append(Outcome(float(o["prob"]), tuple(kids)))
            tail = None
            if st.get("tail") is not None:
                _check_keys(st["tail"], _TAIL_KEYS, f"states[{i}].tail")
                tail = TailFamily(**st["tail"])
            states.append((float(st["prob"]), PointProcessLaw(step, tuple(outs), tail)))
        return EnvironmentLaw(tuple(states))
    except KeyError as exc:
        raise InvalidConfig(f"missing key {exc.args[0]!r}") from None
    except (InvalidLaw, UnsupportedTail) as exc:
        raise InvalidConfig(exc.message, **exc.details) from None


def environment_to_dict(env: EnvironmentLaw) -> dict:
    out = {"lattice_step": env.lattice_step, "states": []}
    for p, s in env.states:
        d = {"prob": p, "outcomes": [{"prob": o.prob, "children": list(o.children)} for o in s.outcomes]}
        if s.tail is not None:
            d["tail"] = s.tail.to_json()
        out["states"].append(d)
    return out


def load_environment(source) -> EnvironmentLaw:
    if isinstance(source, dict):
        return environment_from_dict(source)
    path = Path(source)
    if not path.exists():
        bundled = Path(__file__).parent / "data" / path.name
        if bundled.exists():
            path = bundled
        else:
            raise InvalidConfig("environment file not found", path=str(source))
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig("environment file is not valid JSON", error=str(exc)) from None
    return environment_from_dict(cfg)


def annealed_step(env: EnvironmentLaw) -> dict[int, float]:
    """Mixture over states of the per-state step measures (finite laws)."""
    out: dict[int, list[float]] = {}
    step = env.lattice_step
    for p, s in env.states:
        if not s.is_finite:
            raise UnsupportedTail("annealed step measure needs finite laws")
        for o in s.outcomes:
            for c in o.children:
                out.setdefault(c, []).append(p * o.prob * math.exp(-step * c))
    return {k: math.fsum(v) for k, v in sorted(out.items())}
