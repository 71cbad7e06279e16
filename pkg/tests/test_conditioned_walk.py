import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwre_lab.conditioned_walk import (chained_marginal, conditioned_marginal, kernel_row,
                                        never_descend_probability, sample_conditioned_path,
                                        sample_conditioned_paths, stay_above_probability)
from brwre_lab.env_model import EnvironmentPath, two_state_different_step
from brwre_lab.stats_harness import RngStream


def test_kernel_rows_fair_walk(pm1_path):
    assert kernel_row(pm1_path, 0, 0).targets == {1: pytest.approx(1.0)}
    row = kernel_row(pm1_path, 0, 3).targets
    assert row[4] == pytest.approx(5 / 8, abs=1e-15)
    assert row[2] == pytest.approx(3 / 8, abs=1e-15)


def test_kernel_row_far_from_barrier_approaches_step(pm1_path):
    row = kernel_row(pm1_path, 0, 1000).targets
    assert abs(row[1001] - 0.5) < 1e-3 and abs(row[999] - 0.5) < 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 30), st.integers(0, 40), st.integers(0, 3))
def test_kernel_rows_sum_to_one_in_random_environment(n, x, beta):
    path = EnvironmentPath(two_state_different_step(), seed=5)
    row = kernel_row(path, n, x - beta, beta)
    assert abs(row.deviation) <= 1e-10
    assert min(row.targets) >= -beta


def test_marginal_small_cases(pm1_path):
    assert conditioned_marginal(pm1_path, 0).to_dict() == {0: 1.0}
    assert conditioned_marginal(pm1_path, 1).to_dict() == pytest.approx({1: 1.0})


@pytest.mark.parametrize("beta", [0, 2])
def test_marginals_direct_and_chained_agree(mixed_path, beta):
    for n in range(0, 11):
        direct = conditioned_marginal(mixed_path, n, beta)
        chained = chained_marginal(mixed_path, n, beta)
        assert direct.tv_distance(chained) <= 1e-10
        assert direct.total() == pytest.approx(1.0, abs=1e-12)


def test_single_path_sampler_respects_barrier(mixed_path):
    rng = RngStream(4).generator()
    for _ in range(50):
        z = sample_conditioned_path(mixed_path, 2, 30, rng)
        assert z[0] == 0 and z.min() >= -2


def test_first_step_is_deterministic_for_fair_walk(pm1):
    paths = sample_conditioned_paths(pm1, 0, 1, 1000, RngStream(1))
    assert np.all(paths[:, 1] == 1)


def test_vectorized_sampler_matches_exact_mean(mixed_path):
    n = 40
    paths = sample_conditioned_paths(mixed_path.law, 1, n, 20000, RngStream(9),
                                     states=np.tile(mixed_path.states(n), (20000, 1)))
    assert paths.min() >= -1
    exact = conditioned_marginal(mixed_path, n, 1).mean()
    sd = paths[:, -1].std() / np.sqrt(paths.shape[0])
    assert abs(paths[:, -1].mean() - exact) < 4 * sd
    assert paths[:, 10].mean() < paths[:, 40].mean()


def test_never_descend(pm1_path):
    assert never_descend_probability(pm1_path, 5, 0) == 1.0
    assert never_descend_probability(pm1_path, 3, 1) == pytest.approx(0.75)
    assert never_descend_probability(pm1_path, 4, 4) == pytest.approx(1 / 5)


def test_stay_above_decreases_to_never_descend(pm1_path):
    vals = [stay_above_probability(pm1_path, 3, 1, horizon=h) for h in (10, 100, 1000)]
    assert vals[0] >= vals[1] >= vals[2] >= 0.75 - 1e-12
    assert vals[2] - 0.75 < 0.05
