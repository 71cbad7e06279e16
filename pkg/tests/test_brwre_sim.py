import math

import pytest
from hypothesis import given, settings, strategies as st

from brwre_lab.brwre_sim import (PopulationState, additive_decay_probe, connection_probe, evolve,
                                 martingales, one_step_martingale_check, run_trials, simulate_trial,
                                 w1_mean_check)
from brwre_lab.env_model import (EnvironmentLaw, EnvironmentPath, Outcome, PointProcessLaw,
                                 load_environment)
from brwre_lab.errors import PopulationCapExceeded
from brwre_lab.stats_harness import RngStream

LN2 = math.log(2.0)
TWO_AT_LN2 = PointProcessLaw(LN2, (Outcome(1.0, (1, 1)),))
STAY = PointProcessLaw(1.0, (Outcome(1.0, (0,)),))


def test_two_children_at_ln2():
    pop = evolve(PopulationState.initial(), TWO_AT_LN2, RngStream(0))
    assert pop.total == 2 and pop.min_position() == 1
    row = martingales(pop, EnvironmentPath(EnvironmentLaw.homogeneous(TWO_AT_LN2)))
    assert row.W == pytest.approx(1.0, abs=1e-15)
    assert row.D == pytest.approx(LN2, abs=1e-15)


def test_one_child_at_zero_keeps_population():
    pop = PopulationState.from_sites({3: 5})
    nxt = evolve(pop, STAY, RngStream(0))
    assert nxt.total == 5 and list(nxt.positions[nxt.site_counts() > 0]) == [3]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.dictionaries(st.integers(-5, 5), st.integers(1, 50), min_size=1, max_size=4))
def test_children_are_conserved(seed, sites):
    law = load_environment("boundary_pm1.json").laws[0]
    pop = PopulationState.from_sites(sites, betas=(0, 2))
    nxt = evolve(pop, law, RngStream(seed))
    kids = {o.children: len(o.children) for o in law.outcomes}
    assert min(kids.values()) * pop.total <= nxt.total <= max(kids.values()) * pop.total
    # barrier classes only move outward
    assert nxt.counts[:, nxt.positions < -2][:2].sum() == 0


def test_initial_martingale_values(pm1_path):
    row = martingales(PopulationState.initial(0, (0, 3)), pm1_path)
    assert (row.W, row.D) == (1.0, 0.0)
    assert row.D_beta == {0: 1.0, 3: 4.0}


@settings(max_examples=20, deadline=None)
@given(st.dictionaries(st.integers(-6, 6), st.integers(1, 9), min_size=1, max_size=5))
def test_derivative_is_monotone_in_beta(sites):
    path = EnvironmentPath(load_environment("boundary_pm1.json"))
    pop = PopulationState.from_sites(sites, betas=(0, 1, 3, 8))
    d = martingales(pop, path).D_beta
    assert d[0] <= d[1] <= d[3] <= d[8]


@pytest.mark.parametrize("particles", [[0], [0, 1], [-1, 0, 2], [3, -2, 1]])
def test_one_step_identities(mixed_path, particles):
    for beta in (0, 2):
        for n in (0, 3):
            assert one_step_martingale_check(particles, mixed_path, beta, n).max() <= 1e-10


def test_one_step_dead_particle_contributes_nothing(pm1_path):
    r = one_step_martingale_check([-5, 1], pm1_path, 2, 0, survived=[False, True])
    assert r.D_beta <= 1e-12


def test_trials_are_independent_of_threads():
    env = load_environment("two_state_different_step.json")
    a = run_trials(env, 6, 12, [0, 2], seed=3, threads=1)
    b = run_trials(env, 6, 12, [0, 2], seed=3, threads=4)
    assert a == b


def test_population_cap():
    with pytest.raises(PopulationCapExceeded):
        simulate_trial(EnvironmentPath(load_environment("boundary_pm1.json")), 40, [0], RngStream(0), cap=1000)


def test_mean_of_first_generation_additive_martingale(any_env):
    m, se = w1_mean_check(any_env, 50_000, seed=1)
    assert abs(m - 1.0) < 4 * se


def test_derivative_connection_at_large_beta(pm1):
    rep = connection_probe(pm1, 10, 60, 40, seed=0)
    assert rep.included > 0 and rep.passed


def test_additive_martingale_decays(pm1):
    assert additive_decay_probe(pm1, 100, 5, 45, seed=2).passed
