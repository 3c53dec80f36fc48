import numpy as np
import pytest

from idsrl import _kernels


@pytest.fixture(params=sorted(_kernels.backends()))
def backend(request):
    """Each importable kernel backend module in turn."""
    return _kernels.backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
