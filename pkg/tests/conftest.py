import numpy as np
import pytest

from lipembed import kernels


@pytest.fixture(params=kernels.available_backends())
def kernel_backend(request):
    """Run a test once per kernel backend (numpy and, when present, numba)."""
    previous = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
