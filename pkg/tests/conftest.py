import numpy as np
import pytest

from prlsod.tensor import set_default_dtype


@pytest.fixture(autouse=True)
def float64():
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)
