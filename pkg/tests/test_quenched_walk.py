import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwre_lab.env_model import EnvironmentLaw, EnvironmentPath, two_down_state
from brwre_lab.errors import HorizonExceeded
from brwre_lab.lattice import LatticeDistribution, StepMeasure, killed_propagate, propagate
from brwre_lab.quenched_walk import (HarmonicFunction, harmonic_U, harmonic_residual,
                                     many_to_one_check, step_measure)

FAIR = StepMeasure.from_dict(1.0, {-1: 0.5, 1: 0.5})


def test_convolution_basics():
    once = propagate(LatticeDistribution.delta(1.0), FAIR)
    assert once.to_dict() == {-1: 0.5, 1: 0.5}
    twice = propagate(once, FAIR)
    assert twice.to_dict() == {-2: 0.25, 0: 0.5, 2: 0.25}
    ident = StepMeasure.from_dict(1.0, {0: 1.0})
    assert propagate(twice, ident).to_dict() == twice.to_dict()


def test_killed_step():
    surv, ov, killed = killed_propagate(LatticeDistribution.delta(1.0), FAIR, 0)
    assert surv.to_dict() == {1: 0.5}
    assert (ov, killed) == (0.5, 0.5)
    surv, ov, killed = killed_propagate(LatticeDistribution.delta(1.0), FAIR, 5)
    assert (ov, killed) == (0.0, 0.0)
    down2 = StepMeasure.from_dict(1.0, {-2: 0.25, 0: 0.75})
    _, ov, _ = killed_propagate(LatticeDistribution.from_dict(1.0, {-3: 0.4}), down2, 3)
    assert ov == pytest.approx(2 * 0.4 * 0.25)


def test_step_measure_of_recipe(pm1):
    sm = step_measure(pm1.laws[0])
    got = {x: m for x, m in zip(sm.support.tolist(), sm.masses.tolist()) if m > 0}
    assert got == pytest.approx({-1: 0.5, 1: 0.5}, abs=1e-15)


@pytest.mark.parametrize("y", range(0, 11))
def test_fair_walk_harmonic_is_y_plus_one(pm1_path, y):
    hv = harmonic_U(pm1_path, y, tol=1e-8)
    assert hv.value == pytest.approx(y + 1, abs=1e-8)
    assert hv.error_bound <= 1e-8


def test_loose_tolerance_gives_first_step_lower_bound(pm1_path):
    hv = harmonic_U(pm1_path, 3, tol=1e9)
    assert hv.horizon == 1
    assert hv.lower >= 3.0


def test_harmonic_residual_fair(pm1_path):
    assert harmonic_residual(pm1_path, 2) < 1e-12
    assert harmonic_residual(pm1_path, 0) < 1e-12


def test_harmonic_residual_random_environment(mixed_path):
    for y in range(6):
        assert harmonic_residual(mixed_path, y, tol=1e-8) <= 3e-8


def test_two_unit_down_jumps_bracket_and_budget():
    path = EnvironmentPath(EnvironmentLaw.homogeneous(two_down_state()), 0)
    with pytest.raises(HorizonExceeded):
        harmonic_U(path, 2, tol=1e-8, max_horizon=2000)
    hv = harmonic_U(path, 2, tol=1e-2, max_horizon=20000)
    # the ladder route gives the exact value, independent of the DP bracket
    exact = HarmonicFunction(path, method="homogeneous")(0, 2)
    assert hv.lower - 1e-12 <= exact <= hv.upper + 1e-12


def test_providers_agree_on_skip_free_homogeneous(pm1_path):
    ladder = HarmonicFunction(pm1_path, method="homogeneous")
    closed = HarmonicFunction(pm1_path, method="skip_free")
    ys = np.arange(50)
    assert np.max(np.abs(ladder.values(ys) - closed.values(ys))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30))
def test_harmonic_is_non_decreasing(y, z):
    hf = HarmonicFunction(EnvironmentPath(EnvironmentLaw.homogeneous(two_down_state()), 0),
                          method="homogeneous")
    lo, hi = sorted((y, z))
    assert hf(0, lo) <= hf(0, hi) + 1e-12
    assert hf(0, lo) >= 1.0 - 1e-12


def test_many_to_one(mixed_path):
    for n, f in [(1, lambda v: 1.0), (3, lambda v: float(v[-1] >= 0)), (4, lambda v: max(v))]:
        lhs, rhs = many_to_one_check(mixed_path, n, f)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
    assert many_to_one_check(mixed_path, 0, lambda v: 7.0) == (7.0, 7.0)


def test_many_to_one_expected_children(pm1_path):
    lhs, rhs = many_to_one_check(pm1_path, 1, lambda v: 1.0)
    mean_children = math.fsum(o.prob * len(o.children) for o in pm1_path.law.laws[0].outcomes)
    assert lhs == pytest.approx(mean_children, abs=1e-14)
    assert rhs == pytest.approx(0.5 * (math.e + math.exp(-1)), abs=1e-14)
