import pytest

from crouchsim.config import config_from_dict
from crouchsim.harness import prepare


@pytest.fixture(scope="session")
def default_experiment():
    """Robot hanging on the built-in default web, settled under gravity."""
    return prepare(config_from_dict({"trials": 1}))
