import numpy as np
import pytest

from slowfast.config import build, linear_validation


@pytest.fixture(scope="session")
def setup():
    return build(linear_validation())


@pytest.fixture(scope="session")
def basis(setup):
    return setup.basis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
