import math

import numpy as np
import pytest

from brwre_lab.env_model import EnvironmentLaw, EnvironmentPath, Outcome, PointProcessLaw
from brwre_lab.errors import EnumerationTooLarge
from brwre_lab.spine import (change_of_measure_check, inverse_weight_check, sample_spinal_tree,
                             sample_spine_positions, size_biased_offspring_law, spinal_total_mass,
                             spine_law_check, spine_posterior_check)
from brwre_lab.stats_harness import RngStream


def _single(outcomes, step=1.0):
    law = PointProcessLaw(step, tuple(Outcome(p, c) for p, c in outcomes))
    return EnvironmentPath(EnvironmentLaw.homogeneous(law))


def test_single_outcome_is_certain():
    law = size_biased_offspring_law(_single([(1.0, (0,))]), 0, 2)
    assert law.weights == (1.0,)
    assert law.child_probs == ((1.0,),)
    _, rec = sample_spinal_tree(_single([(1.0, (0,))]), 0, 0, 3, RngStream(0))
    assert rec.selection == [1.0, 1.0, 1.0]


def test_two_identical_children_split_evenly(pm1_path):
    law = size_biased_offspring_law(pm1_path, 0, 4)
    for o, cp in zip(pm1_path.law.laws[0].outcomes, law.child_probs):
        for c, q in zip(o.children, cp):
            twins = [r for d, r in zip(o.children, cp) if d == c]
            assert q == pytest.approx(twins[0], abs=1e-15)


def test_large_x_weights_approach_size_biasing(pm1_path):
    law = size_biased_offspring_law(pm1_path, 0, 1000)
    outs = pm1_path.law.laws[0].outcomes
    plain = np.array([o.prob * sum(math.exp(-c) for c in o.children) for o in outs])
    assert np.max(np.abs(np.array(law.weights) - plain / plain.sum())) < 1e-3


def test_dead_outcomes_get_no_weight(pm1_path):
    law = size_biased_offspring_law(pm1_path, 0, 0, beta=0)
    outs = pm1_path.law.laws[0].outcomes
    for o, w in zip(outs, law.weights):
        if all(c < 0 for c in o.children):
            assert w == 0.0
    assert abs(law.deviation) < 1e-12


def test_one_child_law_spine_has_no_siblings():
    # the only one-child boundary law puts its child at 0
    _, rec = sample_spinal_tree(_single([(1.0, (0,))]), 1, 0, 20, RngStream(1))
    assert all(s == () for s in rec.siblings)
    assert rec.positions == [0] * 21


def test_spine_stays_above_barrier(mixed_path):
    pos = sample_spine_positions(mixed_path, 2, 0, 30, 100_000, RngStream(2))
    assert pos.min() >= -2


def test_selection_probabilities(mixed_path):
    _, rec = sample_spinal_tree(mixed_path, 1, 0, 15, RngStream(3))
    assert all(0.0 < s <= 1.0 for s in rec.selection)
    assert rec.weight[0] == 1.0


@pytest.mark.parametrize("beta", [0, 2])
def test_change_of_measure(mixed_path, beta):
    assert spinal_total_mass(mixed_path, beta, 0, 2) == pytest.approx(1.0, abs=1e-12)
    for f in (lambda t: 1.0, lambda t: float(len(t[-1])), lambda t: float(min(x for _, x in t[-1]) >= 0)):
        lhs, rhs = change_of_measure_check(mixed_path, beta, 0, 2, f)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_change_of_measure_depth_limit(pm1_path):
    with pytest.raises(EnumerationTooLarge):
        change_of_measure_check(pm1_path, 0, 0, 3, lambda t: 1.0)


def test_posterior(pm1_path, mixed_path):
    assert spine_posterior_check(pm1_path, 0, 0, 2) <= 1e-8
    assert spine_posterior_check(mixed_path, 1, 0, 2) <= 1e-8


def test_spine_law_exact(pm1_path, mixed_path):
    assert spine_law_check(pm1_path, 0, 0, 0).tv == 0.0
    assert spine_law_check(pm1_path, 0, 0, 1).tv <= 1e-15
    for n in range(5):
        assert spine_law_check(mixed_path, 0, 0, n).passed
    with pytest.raises(ValueError):
        spine_law_check(pm1_path, 0, 0, 1, mode="guess")


def test_spine_law_statistical(mixed_path):
    rep = spine_law_check(mixed_path, 0, 0, 20, "statistical", 50_000, RngStream(4))
    assert rep.passed


def test_inverse_weight(pm1_path):
    m, se = inverse_weight_check(pm1_path, 0, 0, 6, 400, RngStream(5))
    assert abs(m - 1.0) < 4 * se
