import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwre_lab.stats_harness import (Histogram, RngStream, bonferroni, chi_square_two_sample,
                                     mean_ci, permutation_independence, wilson_interval)


def test_streams_are_reproducible_and_distinct():
    a = RngStream(7).substream("trial", 3).generator().random(5)
    b = RngStream(7).substream("trial", 3).generator().random(5)
    c = RngStream(7).substream("trial", 4).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 1000))
def test_counter_offset_continues_the_stream(seed, skip):
    s = RngStream(seed, 5)
    full = s.generator().random(4 * (skip + 2))
    # one Philox block holds four 64-bit words, one double each
    later = s.at(skip).generator().random(4)
    assert np.array_equal(later, full[4 * skip:4 * skip + 4])


def test_bad_seed_rejected():
    with pytest.raises(ValueError):
        RngStream(-1)


def test_chi_square_identical_exact_laws():
    law = {0: 0.25, 1: 0.75}
    rep = chi_square_two_sample(Histogram.from_samples([0] * 250 + [1] * 750), Histogram.exact(law))
    assert rep.statistic == pytest.approx(0.0, abs=1e-12)
    assert rep.p_value == pytest.approx(1.0)


def test_chi_square_fair_coin_and_disjoint():
    draws = RngStream(1).generator().integers(0, 2, 100_000)
    assert chi_square_two_sample(Histogram.from_samples(draws), Histogram.exact({0: 0.5, 1: 0.5})).passed
    apart = chi_square_two_sample(Histogram.from_samples(np.zeros(500, int)),
                                  Histogram.from_samples(np.ones(500, int)))
    assert apart.p_value < 1e-10


def test_chi_square_rejection_rate_is_near_alpha():
    gen = RngStream(2).generator()
    rejected = 0
    for _ in range(400):
        draws = gen.integers(0, 3, 2000)
        rejected += not chi_square_two_sample(Histogram.from_samples(draws),
                                              Histogram.exact({0: 1 / 3, 1: 1 / 3, 2: 1 / 3})).passed
    assert rejected <= 12  # 0.01 * 400 = 4 expected


def test_permutation_independence():
    gen = RngStream(3).generator()
    a, b = gen.integers(0, 4, 2000), gen.integers(0, 4, 2000)
    assert permutation_independence(a, b, 199, RngStream(0)).passed
    same = permutation_independence(a, a, 199, RngStream(0))
    assert same.p_value <= 1 / 200
    assert permutation_independence(a, np.zeros(2000), 199, RngStream(0)).p_value == 1.0


def test_permutation_p_value_is_reproducible():
    gen = RngStream(4).generator()
    a, b = gen.integers(0, 3, 500), gen.integers(0, 3, 500)
    p1 = permutation_independence(a, b, 99, RngStream(9)).p_value
    p2 = permutation_independence(a, b, 99, RngStream(9)).p_value
    assert p1 == p2


def test_small_helpers():
    assert bonferroni(0.01, 4) == 0.0025
    assert mean_ci([1.0, 1.0, 1.0]) == (1.0, 0.0, 0.0)
    m, se, half = mean_ci([0.0, 2.0])
    assert (m, se, half) == pytest.approx((1.0, 1.0, 3.0))
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
