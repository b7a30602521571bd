import numpy as np
import pytest

from ctcasr import numerics


@pytest.fixture
def f64():
    """Gradient checks need 64-bit floats; restore the default afterwards."""
    with numerics.using_precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
