import numpy as np
import pytest

from driftmatch.schedules import Constant, EdmVE, Geometric


@pytest.fixture(params=["constant", "geometric", "edm"])
def any_schedule(request):
    if request.param == "constant":
        return Constant(2.5, T=1.0)
    if request.param == "geometric":
        return Geometric(0.5, 1.5, T=1.0)
    return EdmVE(0.001, 6.0, rho=3.0, T=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
