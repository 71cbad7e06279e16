import pytest

from brwre_lab.env_model import (EnvironmentPath, load_environment, pm1_environment,
                                 two_state_different_step, two_state_same_step)


@pytest.fixture
def pm1():
    return pm1_environment()


@pytest.fixture
def pm1_path():
    return EnvironmentPath(pm1_environment(), seed=0)


@pytest.fixture
def mixed_path():
    return EnvironmentPath(two_state_different_step(), seed=3)


@pytest.fixture(params=["pm1", "same", "different"])
def any_env(request):
    return {"pm1": pm1_environment, "same": two_state_same_step,
            "different": two_state_different_step}[request.param]()


@pytest.fixture
def bundled():
    return load_environment
