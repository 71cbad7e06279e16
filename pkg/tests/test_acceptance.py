"""The thirteen acceptance criteria, one test each, at their fixed tolerances."""
import json

import pytest

from brwre_lab.acceptance import CHECKS

IDS = [c.__name__.removeprefix("check_") for c in CHECKS]


@pytest.mark.slow
@pytest.mark.parametrize("check", CHECKS, ids=IDS)
def test_acceptance_criterion(check, capsys):
    res = check(0, 1)
    with capsys.disabled():
        print(f"\n{res.line()}")
    assert res.passed, json.dumps(res.metrics, default=str, indent=1)
