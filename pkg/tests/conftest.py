import numpy as np
import pytest
from hypothesis import settings

from ergolab.diffeo import ToralLinear

settings.register_profile("ergolab", max_examples=30, deadline=None)
settings.load_profile("ergolab")

TWOPI_INV = 1 / (2 * np.pi)


@pytest.fixture
def cat():
    return ToralLinear(np.array([[2, 1], [1, 1]]))


@pytest.fixture
def shears():
    return ToralLinear(np.array([[1, 1], [0, 1]])), ToralLinear(np.array([[1, 0], [1, 1]]))
