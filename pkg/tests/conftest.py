import numpy as np
import pytest

from swingpinn.system import preset_system


@pytest.fixture(scope="session")
def smib():
    return preset_system("1bus")


@pytest.fixture(scope="session")
def two_bus():
    return preset_system("2bus")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
