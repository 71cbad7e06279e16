"""The acceptance suite: thirteen checks at fixed tolerances and seeds.

Each check returns a CheckResult with deterministic metrics; wall-clock
times are printed but never written, so reruns hash identically.
"""
from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .brwre_sim import additive_decay_probe, one_step_martingale_check
from .conditioned_walk import chained_marginal, conditioned_marginal
from .criterion import d_infinity_probe, moment_criterion
from .env_model import (EnvironmentLaw, EnvironmentPath, boundary_check, load_environment)
from .quenched_walk import harmonic_residual, harmonic_U, many_to_one_check
from .renewal_tanaka import (brute_force_renewal, divergence_probe, excursion_law_test, harmonic_identity_Rminus,
                             occupation_mc_check, renewal_functions, tanaka_identity_check, tanaka_independence_test)
from .spine import change_of_measure_check, spine_law_check, spine_posterior_check
from .stats_harness import RngStream

THREE = ("boundary_pm1.json", "two_state_same_step.json", "two_state_different_step.json")


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}"


def _env(name: str) -> EnvironmentLaw:
    return load_environment(name)


def _tv(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def check_boundary(seed: int, threads: int) -> CheckResult:
    good = boundary_check(_env("boundary_pm1.json"), 1e-9)
    bad = boundary_check(_env("deterministic_pm1.json"), 1e-9)
    expected = abs(1.0 - (math.exp(-1.0) + math.e))
    first = abs(bad.residuals[0][0])
    ok = good.passed and not bad.passed and abs(first - expected) <= 1e-12
    return CheckResult(1, "boundary validation", ok,
                       {"pm1_max_residual": good.max_residual, "deterministic_residual": first,
                        "expected_residual": expected})


def check_harmonic_oracle(seed: int, threads: int) -> CheckResult:
    path = EnvironmentPath(_env("boundary_pm1.json"), seed)
    errs = [abs(harmonic_U(path, y, 1e-8).value - (y + 1)) for y in range(11)]
    return CheckResult(2, "harmonic oracle U(y) = y + 1", max(errs) <= 1e-6, {"max_error": max(errs)})


def check_harmonic_fixed_point(seed: int, threads: int) -> CheckResult:
    worst = {}
    for name in THREE:
        path = EnvironmentPath(_env(name), seed)
        worst[name] = max(harmonic_residual(path, y, 1e-8, beta) for y in (0, 1, 2, 5) for beta in (0, 2))
    return CheckResult(3, "harmonic fixed point", max(worst.values()) <= 3e-8, {"max_residual": worst})


def check_many_to_one(seed: int, threads: int) -> CheckResult:
    fns: dict[str, Callable] = {"constant": lambda s: 1.0,
                                "positive_indicator": lambda s: float(s[-1] > 0),
                                "max": lambda s: max(s)}
    worst = 0.0
    for name in THREE:
        path = EnvironmentPath(_env(name), seed)
        for n in (1, 2, 3):
            for f in fns.values():
                lhs, rhs = many_to_one_check(path, n, f)
                worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return CheckResult(4, "many-to-one", worst <= 1e-12, {"max_relative_gap": worst})


def check_conditioned_dual_route(seed: int, threads: int) -> CheckResult:
    tv, dev = 0.0, []
    for name in THREE:
        path = EnvironmentPath(_env(name), seed)
        for beta in (0, 2):
            for n in range(11):
                direct = conditioned_marginal(path, n, beta)
                chained = chained_marginal(path, n, beta, max_deviation=dev)
                tv = max(tv, _tv(direct.to_dict(), chained.to_dict()))
    worst = max(dev)
    return CheckResult(5, "conditioned walk dual route", tv <= 1e-8 and worst <= 1e-10,
                       {"max_tv": tv, "max_row_deviation": worst})


def check_renewal(seed: int, threads: int) -> CheckResult:
    env = _env("boundary_pm1.json")
    xs = np.arange(1, 41)
    exact = renewal_functions(env, 40)
    brute_minus, brute_r = brute_force_renewal(env, 40)
    oracle = max(float(np.max(np.abs(exact.R_minus - (exact.x + 1)))),
                 float(np.max(np.abs(exact.R[xs] - (2 * xs - 1)))))
    dual = max(float(np.max(np.abs(exact.R_minus - brute_minus))), float(np.max(np.abs(exact.R - brute_r))))
    ident = max(float(np.max(harmonic_identity_Rminus(_env(n), range(0, 41)))) for n in THREE)
    return CheckResult(6, "renewal oracles", max(oracle, dual, ident) <= 1e-9,
                       {"oracle_error": oracle, "exact_vs_brute_force": dual, "harmonic_identity_residual": ident})


def check_occupation_mc(seed: int, threads: int) -> CheckResult:
    base = RngStream(seed).substream("occupation")
    a = occupation_mc_check(_env("boundary_pm1.json"), 0, {0: 1.0, 1: 1.0, 2: 1.0}, 100_000, 200, base.substream(0))
    b = occupation_mc_check(_env("two_state_different_step.json"), 2, {-2: 1.0, -1: 1.0, 0: 1.0}, 100_000, 200,
                      base.substream(1))
    return CheckResult(7, "occupation identity (Monte Carlo)", a.passed and b.passed,
                       {"pm1_beta0": a.to_dict(), "two_state_different_step_beta2": b.to_dict()})


def check_tanaka(seed: int, threads: int) -> CheckResult:
    base = RngStream(seed).substream("tanaka")
    ident = 0.0
    for name in ("boundary_pm1.json", "two_state_different_step.json"):
        path = EnvironmentPath(_env(name), seed)
        for k in range(1, 5):
            ident = max(ident, tanaka_identity_check(path, k)[0])
    # independence needs states sharing one step law; see the notes in renewal_tanaka
    indep = {name: tanaka_independence_test(_env(name), 104_000, base.substream("indep", name))
             for name in ("boundary_pm1.json", "two_state_same_step.json")}
    enough = all(min(r.uncensored) >= 100_000 for r in indep.values())
    laws = {name: excursion_law_test(_env(name), 100_000, base.substream("law", name))
            for name in ("boundary_pm1.json", "two_state_different_step.json")}
    ok = ident <= 1e-8 and enough and all(r.passed for r in indep.values()) and all(r.passed for r in laws.values())
    return CheckResult(8, "excursion decomposition", ok,
                       {"identity_residual": ident,
                        "independence": {k: v.to_dict() for k, v in indep.items()},
                        "excursion_law": {k: v.to_dict() for k, v in laws.items()}})


def check_one_step(seed: int, threads: int) -> CheckResult:
    worst = 0.0
    pops = ([0], [0, 1], [-1, 0, 2], [3, -2, 1])
    for name in THREE:
        path = EnvironmentPath(_env(name), seed)
        for beta in (0, 2):
            for n in (0, 1, 2):
                for pop in pops:
                    worst = max(worst, one_step_martingale_check(pop, path, beta, n).max())
                # a particle whose ancestry already left the barrier contributes nothing
                worst = max(worst, one_step_martingale_check([0, 1], path, beta, n, [True, False]).max())
    return CheckResult(9, "martingale one-step identities", worst <= 1e-8, {"max_residual": worst})


def _tree_indicator(target):
    return lambda t: float(t == target)


def check_spine(seed: int, threads: int) -> CheckResult:
    gap, post, tv = 0.0, 0.0, 0.0
    for name in THREE:
        path = EnvironmentPath(_env(name), seed)
        for beta in (0, 2):
            # a specific depth-2 marked tree: the root's first child has its outcome 0 children
            kids1 = path.law_at(1).outcomes[0].children
            kids2 = path.law_at(2).outcomes[0].children
            gen1 = tuple((0, c) for c in kids1)
            gen2 = tuple((i, x + c) for i, (_, x) in enumerate(gen1) for c in kids2)
            fs = [lambda t: 1.0,
                  lambda t: math.fsum(math.exp(-path.law.lattice_step * x) for _, x in t[-1]),
                  _tree_indicator((((-1, 0),), gen1, gen2))]
            for n in (1, 2):
                for f in fs:
                    lhs, rhs = change_of_measure_check(path, beta, 0, n, f)
                    gap = max(gap, abs(lhs - rhs))
            post = max(post, spine_posterior_check(path, beta, 0, 2))
            for n in range(5):
                tv = max(tv, spine_law_check(path, beta, 0, n).tv)
    stat = spine_law_check(EnvironmentPath(_env("two_state_different_step.json"), seed), 0, 0, 20, "statistical",
                           100_000, RngStream(seed).substream("spine"))
    ok = gap <= 1e-8 and post <= 1e-8 and tv <= 1e-8 and stat.passed
    return CheckResult(10, "spinal decomposition", ok,
                       {"change_of_measure_gap": gap, "posterior_residual": post, "exact_tv": tv,
                        "statistical": stat.to_dict()})


def _moment_oracle(env: EnvironmentLaw) -> float:
    """Independent outcome-by-outcome sum of Y log²₊Y + Z log₊Z."""
    h = env.lattice_step
    total = []
    for w, s in env.states:
        for o in s.outcomes:
            v = h * np.array(o.children, dtype=float)
            y = float(np.exp(-v).sum())
            z = float((v * np.exp(-v))[v >= 0].sum())
            total.append(w * o.prob * (y * max(math.log(y), 0.0) ** 2 + (z * math.log(z) if z > 1 else 0.0)))
    return math.fsum(total)


def check_criterion(seed: int, threads: int) -> CheckResult:
    single = moment_criterion(_env("single_child.json"))
    gaps = {}
    for name in THREE + ("two_down.json",):
        env = _env(name)
        gaps[name] = abs(moment_criterion(env).moment - _moment_oracle(env))
    tail = moment_criterion(_env("power_tail.json"))
    ok = (single.moment == 0.0 and single.classification == "nondegenerate"
          and max(gaps.values()) <= 1e-12
          and not tail.y_log2.finite and tail.classification == "degenerate"
          and tail.cases == {"i": True, "ii": False, "iii": False})
    return CheckResult(11, "moment criterion", ok,
                       {"single_child_moment": single.moment, "oracle_gap": gaps, "tail": tail.to_dict()})


def check_qualitative(seed: int, threads: int) -> CheckResult:
    env = _env("boundary_pm1.json")
    decay = additive_decay_probe(env, 200, 5, 45, seed=seed, threads=threads)
    dinf = d_infinity_probe(env, (), 500, 40, seed=seed + 1, threads=threads)[0]
    base = RngStream(seed).substream("divergence")
    grow = divergence_probe(env, 0, lambda x: (1 + np.maximum(x, 0)) ** -2.0, 2000, [250, 500, 1000, 2000],
                            base.substream(2))
    flat = divergence_probe(env, 0, lambda x: (1 + np.maximum(x, 0)) ** -3.0, 2000, [250, 500, 1000, 2000],
                            base.substream(3))
    ok = decay.passed and dinf.excludes_zero and grow.verdict == "growth" and flat.verdict == "plateau"
    return CheckResult(12, "qualitative limit probes", ok,
                       {"additive_decay": decay.to_dict(), "d_infinity": dinf.to_dict(),
                        "divergence_exponent_2": grow.to_dict(), "divergence_exponent_3": flat.to_dict()})


REPRO_COMMANDS = (
    ["brwre", "--env", "boundary_pm1.json", "--trials", "40", "--horizon", "15", "--betas", "0,2"],
    ["conditioned", "--env", "two_state_different_step.json", "--n", "8", "--beta", "1", "--trials", "500"],
    ["tanaka-test", "--env", "boundary_pm1.json", "--trials", "3000", "--permutations", "999"],
)


def _hashes(argv: list[str], seed: int, threads: int, root: Path) -> dict:
    from .cli import run
    out = root / f"{argv[0]}-{threads}-{len(list(root.iterdir()))}"
    code = run(argv + ["--seed", str(seed), "--threads", str(threads), "--out", str(out)])
    # a failed statistical check still writes its artifacts, which is all this compares
    if not (out / "manifest.json").exists():
        return {"exit_code": code}
    return json.loads((out / "manifest.json").read_text())["files"]


def check_reproducibility(seed: int, threads: int) -> CheckResult:
    same, across = True, True
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        for argv in REPRO_COMMANDS:
            a = _hashes(argv, seed, 1, root)
            b = _hashes(argv, seed, 1, root)
            c = _hashes(argv, seed, 8, root)
            same &= a == b and "exit_code" not in a
            across &= a == c
    return CheckResult(13, "reproducibility", same and across,
                       {"rerun_identical": same, "threads_1_vs_8_identical": across})


CHECKS = (check_boundary, check_harmonic_oracle, check_harmonic_fixed_point, check_many_to_one,
          check_conditioned_dual_route, check_renewal, check_occupation_mc, check_tanaka, check_one_step,
          check_spine, check_criterion, check_qualitative, check_reproducibility)


def run_suite(seed: int = 0, threads: int = 1, only: set[int] | None = None, echo=print) -> list[CheckResult]:
    results = []
    for i, check in enumerate(CHECKS, start=1):
        if only is not None and i not in only:
            continue
        t0 = time.perf_counter()
        res = check(seed, threads)
        if echo is not None:
            echo(f"{res.line()}  ({time.perf_counter() - t0:.1f} s)")
        results.append(res)
    return results
