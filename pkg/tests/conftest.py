import numpy as np
import pytest

from natseg.tensor import set_float64


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def float64_mode():
    """Enable the 64-bit build flag for one test, restoring float32 after."""
    set_float64(True)
    yield
    set_float64(False)
