import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from brwre_lab.env_model import (EnvironmentLaw, EnvironmentPath, Outcome, PointProcessLaw,
                                 boundary_check, boundary_normalize, deterministic_pm1_state,
                                 environment_from_dict, environment_to_dict, load_environment,
                                 log_laplace, pm1_boundary_state, power_tail_state,
                                 randomized_boundary_state, tilt_point, validate_assumptions)
from brwre_lab.errors import InvalidConfig, InvalidLaw, NoCommonTiltPoint

LN2 = math.log(2.0)


def _law(outcomes, step=1.0):
    return PointProcessLaw(step, tuple(Outcome(p, c) for p, c in outcomes))


def test_log_laplace_trivial_values():
    assert log_laplace(_law([(1.0, (0,))]), 1.0) == 0.0
    two = PointProcessLaw(LN2, (Outcome(1.0, (1, 1)),))
    assert abs(log_laplace(two, 1.0)) < 1e-15


def test_log_laplace_pm1_matches_direct_sum():
    direct = math.log(math.exp(-1.0) + math.exp(1.0))
    assert log_laplace(deterministic_pm1_state(), 1.0) == pytest.approx(direct, abs=1e-15)
    assert direct == pytest.approx(1.1269, abs=1e-4)


def test_two_children_at_ln2_fails_only_the_drift_condition():
    env = EnvironmentLaw.homogeneous(PointProcessLaw(LN2, (Outcome(1.0, (1, 1)),)))
    rep = boundary_check(env)
    (mass, drift), = rep.residuals
    assert abs(mass) < 1e-15
    assert drift == pytest.approx(LN2, abs=1e-15)
    assert not rep.passed


def test_deterministic_pm1_is_not_boundary():
    rep = boundary_check(EnvironmentLaw.homogeneous(deterministic_pm1_state()))
    (mass, drift), = rep.residuals
    assert abs(mass) == pytest.approx(abs(1 - (math.exp(-1) + math.e)), abs=1e-12)
    assert drift == pytest.approx(math.exp(-1) - math.e, abs=1e-12)


def test_recipe_laws_are_boundary():
    assert boundary_check(EnvironmentLaw.homogeneous(pm1_boundary_state()), tol=0.0).max_residual < 1e-15


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([0.5, 1.0, 1.5]))
def test_recipe_is_boundary_for_any_mean_zero_two_point_step(up, down, step):
    # every outcome needs a child, so the upward mean count must reach one
    assume(down / (up + down) * math.exp(step * up) >= 1.0)
    law = randomized_boundary_state({up: down / (up + down), -down: up / (up + down)}, step)
    # the recipe scales the step measure by e^{hx}, so a mean-zero step means boundary
    assert boundary_check(EnvironmentLaw.homogeneous(law)).max_residual < 1e-12


def test_power_tail_state_is_boundary():
    law = power_tail_state()
    assert boundary_check(EnvironmentLaw.homogeneous(law)).max_residual < 1e-9


def test_normalize_identity_and_scaled_law():
    env = EnvironmentLaw.homogeneous(pm1_boundary_state())
    same = boundary_normalize(env, 1.0)
    assert boundary_check(same).max_residual < 1e-12
    scaled = EnvironmentLaw.homogeneous(PointProcessLaw(2.0, pm1_boundary_state().outcomes))
    t = tilt_point(scaled.laws[0])
    assert t == pytest.approx(0.5, abs=1e-9)
    back = boundary_normalize(scaled, t)
    assert boundary_check(back).max_residual < 1e-9


def test_incompatible_tilt_points_rejected():
    a = PointProcessLaw(1.0, pm1_boundary_state().outcomes)
    b = PointProcessLaw(1.0, randomized_boundary_state({2: 1 / 3, -1: 2 / 3}).outcomes)
    scaled_b = PointProcessLaw(1.0, tuple(Outcome(o.prob, tuple(2 * c for c in o.children))
                                          for o in b.outcomes))
    env = EnvironmentLaw(((0.5, a), (0.5, scaled_b)))
    with pytest.raises(NoCommonTiltPoint):
        boundary_normalize(env, tilt_point(a))


def test_assumptions():
    ok = validate_assumptions(EnvironmentLaw.homogeneous(pm1_boundary_state()))
    assert ok.passed and ok.moment_finite
    single = EnvironmentLaw.homogeneous(_law([(0.5, (1,)), (0.5, (-1,))]))
    assert not validate_assumptions(single).branching_somewhere
    negative = EnvironmentLaw.homogeneous(_law([(1.0, (-1, -2))]))
    assert validate_assumptions(negative).positive_displacement_mass == (False,)


def test_invalid_laws():
    with pytest.raises(InvalidLaw):
        _law([(0.5, (1,))])
    with pytest.raises(InvalidLaw):
        _law([(1.0, ())])
    with pytest.raises(InvalidLaw):
        EnvironmentLaw(((0.5, pm1_boundary_state()), (0.5, PointProcessLaw(2.0, ((1.0, (1,)),)))))


@pytest.mark.parametrize("name", ["boundary_pm1", "two_state_same_step", "two_state_different_step",
                                  "two_down", "deterministic_pm1", "power_tail", "single_child"])
def test_bundled_environments_round_trip(name):
    env = load_environment(f"{name}.json")
    again = environment_from_dict(json.loads(json.dumps(environment_to_dict(env))))
    assert again == env


def test_unknown_keys_rejected():
    cfg = environment_to_dict(load_environment("boundary_pm1.json"))
    cfg["colour"] = "red"
    with pytest.raises(InvalidConfig):
        environment_from_dict(cfg)


def test_environment_path_is_deterministic_and_shiftable():
    env = load_environment("two_state_different_step.json")
    p = EnvironmentPath(env, seed=11)
    xs = p.states(10000)
    assert np.array_equal(xs, EnvironmentPath(env, seed=11).states(10000))
    assert np.array_equal(p.shift(4097).states(100), xs[4097:4197])
    assert p.state(5000) == xs[4999]
    assert 0.45 < xs.mean() < 0.55
