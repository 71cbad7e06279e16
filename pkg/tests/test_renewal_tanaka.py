import numpy as np
import pytest

from brwre_lab.conditioned_walk import conditioned_marginal
from brwre_lab.env_model import EnvironmentLaw, EnvironmentPath, skewed_state
from brwre_lab.errors import BudgetExceeded, TooFewUncensored
from brwre_lab.quenched_walk import annealed_step_measure
from brwre_lab.renewal_tanaka import (brute_force_renewal, divergence_probe, excursion_law_test,
                                      first_ascending_law, green_measure, harmonic_identity_Rminus,
                                      ladder_decompose, occupation_mc_check, occupation_identity_check,
                                      prospective_minimum, reconstruct_from_excursions,
                                      renewal_functions, sample_excursions, tanaka_identity_check,
                                      tanaka_independence_test)
from brwre_lab.stats_harness import RngStream, permutation_independence


def test_ladder_epochs_by_hand():
    down = ladder_decompose([0, -1, -2])
    assert down.descending_epochs == (0, 1, 2)
    assert down.descending_heights == (-1, -2)
    up = ladder_decompose([0, 1, 0, 2])
    assert up.ascending_epochs == (0, 1, 3)
    assert up.ascending_heights == (1, 2)
    mono = ladder_decompose([0, 1, 2, 3])
    assert mono.ascending_epochs == (0, 1, 2, 3) and mono.descending_epochs == (0,)


def test_fair_renewal_closed_forms(pm1):
    t = renewal_functions(pm1, 40)
    assert np.allclose(t.R_minus, t.x + 1, atol=1e-12)
    xs = np.arange(1, 41)
    assert np.allclose(t.R[xs], 2 * xs - 1, atol=1e-12)
    assert t.R[0] == pytest.approx(1.0)


@pytest.mark.parametrize("make", ["pm1", "skewed"])
def test_renewal_exact_matches_ladder_chains(pm1, make):
    env = pm1 if make == "pm1" else EnvironmentLaw.homogeneous(skewed_state())
    t = renewal_functions(env, 30)
    rm, r = brute_force_renewal(env, 30)
    assert np.max(np.abs(t.R_minus - rm)) < 1e-10
    assert np.max(np.abs(t.R - r)) < 1e-10


def test_renewal_harmonic_identity(pm1, any_env):
    res = harmonic_identity_Rminus(pm1, [0, 3])
    assert res.max() < 1e-12
    assert harmonic_identity_Rminus(any_env, range(30)).max() < 1e-9


def test_monte_carlo_renewal_budget(pm1):
    with pytest.raises(BudgetExceeded):
        renewal_functions(pm1, 5, "monte_carlo", 500, RngStream(0), max_steps=200)
    t = renewal_functions(pm1, 5, "monte_carlo", 2000, RngStream(0), max_censored=0.2)
    # unfinished chains undercount, so allow the censored share on top of the noise
    slack = 5 * np.maximum(t.stderr_minus, 1e-3) + t.censored_fraction * (t.x + 1)
    assert np.all(np.abs(t.R_minus - (t.x + 1)) < slack)


def test_occupation_identity(pm1, any_env):
    assert occupation_identity_check(pm1, 0, {}, 10) == (0.0, 0.0, 0.0)
    for beta, f in [(0, {0: 1.0}), (2, {-2: 1.0, -1: 0.5, 3: 2.0})]:
        lhs, rhs, bound = occupation_identity_check(any_env, beta, f, 3000)
        assert abs(lhs - rhs) <= bound
    far_lhs, _, _ = occupation_identity_check(pm1, 0, {500: 1.0}, 100)
    assert far_lhs == 0.0


def test_green_measure_of_fair_walk_at_zero(pm1):
    # returns to 0 while staying >= 0: Σ_n P(S_n = 0, min >= 0) = 1 for the fair walk
    assert green_measure(pm1, 0, 0)[0] == pytest.approx(1.0, abs=1e-12)


def test_occupation_monte_carlo(pm1):
    r = occupation_mc_check(pm1, 0, {0: 1.0, 1: 1.0, 2: 1.0}, 20000, 200, RngStream(2))
    assert r.passed
    z = occupation_mc_check(pm1, 0, {}, 100, 50, RngStream(2))
    assert z.mc_estimate == 0.0 and z.exact_integral == 0.0


def test_prospective_minimum_by_hand():
    assert prospective_minimum([0, 1, 2, 3]) == (1, False)
    assert prospective_minimum([0]) == (None, True)
    assert prospective_minimum([0, 2, 1, 3, 4, 5], window=4) == (2, True)
    nu, _ = prospective_minimum([0, 1, 3, 4, 0, 2])
    assert nu == 4


@pytest.mark.parametrize("k", [1, 2, 3])
def test_tanaka_identity(mixed_path, pm1_path, k):
    for path in (pm1_path, mixed_path):
        res, table = tanaka_identity_check(path, k)
        assert res <= 1e-10
        assert all(x >= 0 for x in table)


def test_first_ascending_law_of_fair_walk(pm1):
    joint, tail = first_ascending_law(annealed_step_measure(pm1), 3000)
    height = {}
    for (_, x), m in joint.items():
        height[x] = height.get(x, 0.0) + m
    # a first step up lands at height 1 at once; every late ladder epoch is a return to 0
    assert height[1] == pytest.approx(0.5, abs=1e-15)
    assert height[0] + tail == pytest.approx(0.5, abs=1e-12)
    assert tail < 0.02


def test_excursion_sample_properties(mixed_path):
    s = sample_excursions(mixed_path, 3000, RngStream(5), cap=500, post_steps=3, keep=8)
    ok = s.uncensored
    assert ok.mean() > 0.9
    assert np.all(s.zeta_nu[ok] >= 0)
    # nothing after ν goes below ζ_ν
    assert np.all(np.cumsum(s.post[ok], axis=1) >= 0) or np.all(s.post[ok] >= 0)


def test_excursion_law(pm1):
    rep = excursion_law_test(pm1, 20000, RngStream(1))
    assert rep.passed
    with pytest.raises(TooFewUncensored):
        excursion_law_test(pm1, 0, RngStream(1))


def test_independence_holds_and_has_power(pm1):
    rep = tanaka_independence_test(pm1, 5000, RngStream(3))
    assert rep.passed
    s = sample_excursions(EnvironmentPath(pm1, 0), 3000, RngStream(4), post_steps=1, keep=0)
    f = s.features()
    paired = permutation_independence(f["zeta_nu"], f["zeta_nu"] + f["post1"], 199, RngStream(0))
    assert paired.p_value < 0.01
    const = permutation_independence(f["nu"], np.zeros_like(f["nu"]), 199, RngStream(0))
    assert const.p_value == 1.0


def test_reconstruction_matches_conditioned_marginal(pm1, pm1_path):
    s = sample_excursions(pm1, 40000, RngStream(8), cap=200, post_steps=0, keep=12)
    z = reconstruct_from_excursions(s, 10)
    exact = conditioned_marginal(pm1_path, 10).mean()
    assert abs(z.mean() - exact) < 4 * z.std() / np.sqrt(z.size)


def test_divergence_probe_trivial_and_growth(pm1):
    zero = divergence_probe(pm1, 0, lambda x: np.zeros_like(x, dtype=float), 50, [10, 20, 40],
                            RngStream(0))
    assert zero.medians == (0.0, 0.0, 0.0)
    grow = divergence_probe(pm1, 0, lambda x: (1 + np.maximum(x, 0)) ** -2.0, 500, [250, 500, 1000, 2000],
                            RngStream(0))
    flat = divergence_probe(pm1, 0, lambda x: (1 + np.maximum(x, 0)) ** -3.0, 500, [250, 500, 1000, 2000],
                            RngStream(0))
    assert grow.verdict == "growth" and flat.verdict == "plateau"
