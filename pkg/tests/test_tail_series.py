import math

import numpy as np
import pytest
from scipy.special import zeta

from brwre_lab.errors import UnsupportedTail
from brwre_lab.tail_series import TailFamily, bertrand, tail_sum


def test_constant_coefficient_matches_hurwitz_zeta():
    tail = TailFamily(0.3, alpha=3.0)
    got = tail_sum(tail, 1.0, 1, lambda d: [1.0])
    assert got == pytest.approx(0.3 * zeta(2.0, 3) / zeta(3.0, 3), rel=1e-12)


@pytest.mark.parametrize("b,step", [(2.5, 1.0), (1.0, 0.5)])
def test_discounted_sum_matches_brute_force(b, step):
    tail = TailFamily(1.0, alpha=3.5, loglog_coeff=b)
    k = np.arange(3, 20_000_000, dtype=float)
    d = tail.displacement_index(k, step) * step
    brute = math.fsum(k ** -2.5 * np.exp(-d) * np.log(k)) / tail.normalizer()
    got = tail_sum(tail, step, 1, lambda D: [0.0, math.exp(-D)])
    # the brute-force remainder beyond 2e7 is below 1e-9 relative
    assert got == pytest.approx(brute, rel=1e-8)


def test_invalid_tails():
    with pytest.raises(UnsupportedTail):
        TailFamily(0.5, alpha=1.5)
    with pytest.raises(UnsupportedTail):
        TailFamily(0.5, k_min=2)
    with pytest.raises(UnsupportedTail):
        TailFamily(0.0)


def test_bertrand_classes():
    assert bertrand(2.0, 0.0) == (True, "finite")
    assert bertrand(0.5, 0.0)[0] is False
    assert bertrand(1.0, 2.0) == (True, "finite")
    assert bertrand(1.0, 0.5) == (False, "(log K)^0.5")
    assert bertrand(1.0, 1.0, 2.0) == (True, "finite")
    assert bertrand(1.0, 1.0, 1.0) == (False, "log log log K")
    assert bertrand(1.0, 1.0, -1.0) == (False, "(log log K)^2")
