import math

import numpy as np
import pytest

from brwre_lab.criterion import (d_infinity_probe, expected_tilde_x, moment_criterion, series_probe,
                                 series_term, tilde_x)
from brwre_lab.env_model import (EnvironmentLaw, EnvironmentPath, Outcome, PointProcessLaw,
                                 load_environment, power_tail_state)
from brwre_lab.stats_harness import RngStream

STAY = EnvironmentLaw.homogeneous(PointProcessLaw(1.0, (Outcome(1.0, (0,)),)))


def _direct_moments(state):
    """Per-outcome Y and Z summed directly, for finite laws."""
    y2 = zl = 0.0
    for o in state.outcomes:
        y = sum(math.exp(-c) for c in o.children)
        z = sum(c * math.exp(-c) for c in o.children if c >= 0)
        y2 += o.prob * y * max(math.log(y), 0.0) ** 2 if y > 0 else 0.0
        zl += o.prob * z * max(math.log(z), 0.0) if z > 0 else 0.0
    return y2, zl


def test_single_child_at_zero():
    rep = moment_criterion(STAY)
    assert rep.y_mean.value == 1.0
    assert rep.moment == 0.0
    assert rep.classification == "nondegenerate"


@pytest.mark.parametrize("name", ["boundary_pm1", "two_state_same_step", "two_state_different_step"])
def test_finite_laws_match_direct_sums(name):
    env = load_environment(f"{name}.json")
    rep = moment_criterion(env)
    y2 = sum(w * _direct_moments(s)[0] for w, s in env.states)
    zl = sum(w * _direct_moments(s)[1] for w, s in env.states)
    assert rep.y_log2.value == pytest.approx(y2, abs=1e-14)
    assert rep.z_log.value == pytest.approx(zl, abs=1e-14)
    assert rep.y_mean.value == pytest.approx(1.0, abs=1e-12)
    assert rep.classification == "nondegenerate"
    assert rep.cases == {"i": False, "ii": False, "iii": False}


def test_criterion_ignores_outcome_order():
    env = load_environment("two_state_different_step.json")
    flipped = EnvironmentLaw(tuple((w, s.reversed()) for w, s in reversed(env.states)))
    a, b = moment_criterion(env), moment_criterion(flipped)
    assert a.moment == pytest.approx(b.moment, abs=1e-15)


@pytest.mark.parametrize("b,cases,label", [
    (2.5, {"i": True, "ii": False, "iii": False}, "degenerate"),
    (2.0, {"i": False, "ii": True, "iii": True}, "degenerate"),
    (3.5, {"i": False, "ii": False, "iii": False}, "nondegenerate"),
])
def test_tail_family_cases(b, cases, label):
    rep = moment_criterion(EnvironmentLaw.homogeneous(power_tail_state(loglog_coeff=b)))
    assert rep.cases == cases
    assert rep.classification == label
    assert rep.y_mean.value == pytest.approx(1.0, abs=1e-9)


def test_tilde_x_formulas(pm1_path):
    stay = EnvironmentPath(STAY)
    assert tilde_x(stay, 0, 3, 0, (0,)) == pytest.approx(1.0)
    assert tilde_x(pm1_path, 0, 2, 1, (-5, -4)) == 0.0
    # children (+1, -1) at x = 2: (U(4)e^{-1} + U(2)e^{1}) / U(3)
    assert tilde_x(pm1_path, 0, 2, 0, (1, -1)) == pytest.approx((4 * math.exp(-1) + 2 * math.e) / 3)


@pytest.mark.parametrize("x", [0, 1, 5, 40])
def test_tilde_x_has_mean_one(pm1_path, x):
    assert expected_tilde_x(pm1_path, 0, x, 0) == pytest.approx(1.0, abs=1e-13)


def test_tilde_x_has_mean_one_with_tail():
    path = EnvironmentPath(EnvironmentLaw.homogeneous(power_tail_state()))
    for x in (0, 3, 12):
        assert expected_tilde_x(path, 0, x, 1) == pytest.approx(1.0, abs=1e-12)


def test_degenerate_variant_vanishes_for_huge_c(pm1_path):
    assert series_term(pm1_path, 0, 30, 0, "degenerate", 1e12) == 0.0


def test_series_probe_finite_law_plateaus(pm1):
    # the heuristic needs horizons past the early transient; 256 is still borderline
    rep = series_probe(pm1, 0, 200, 1024, "L1", rng=RngStream(0))
    assert rep.verdict == "plateau"
    assert all(np.diff(rep.means) >= 0)


def test_series_probe_rejects_bad_arguments(pm1):
    with pytest.raises(ValueError):
        series_probe(pm1, 0, 10, 10, "L2", rng=RngStream(0))
    with pytest.raises(ValueError):
        series_probe(pm1, 0, 10, 10, "degenerate", c=0.5, rng=RngStream(0))


def test_d_infinity_single_child_is_zero():
    rep = d_infinity_probe(STAY, (), trials=5, horizon=10)[0]
    assert rep.median_abs_D == (0.0,) * 11
    assert rep.positive_fraction == 0.0


def test_d_infinity_boundary_law_is_positive(pm1):
    reps = d_infinity_probe(pm1, (0,), trials=200, horizon=30, seed=1)
    assert reps[0].beta is None and reps[1].beta == 0
    assert reps[0].excludes_zero


@pytest.mark.parametrize("b,verdict", [(2.0, "growth"), (3.5, "plateau")])
def test_series_probe_follows_the_tail_moment(b, verdict):
    env = EnvironmentLaw.homogeneous(power_tail_state(loglog_coeff=b))
    assert series_probe(env, 0, 100, 1024, "degenerate", rng=RngStream(0)).verdict == verdict
