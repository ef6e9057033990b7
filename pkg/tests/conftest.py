import numpy as np
import pytest

from pobstacle.lattice import LatticeDomain


@pytest.fixture
def dom1():
    return LatticeDomain.box([0.0], [1.0], 0.02, 0.1, 0.002)


@pytest.fixture
def dom2():
    return LatticeDomain.box([0.0, 0.0], [1.0, 1.0], 0.01, 0.1, 0.001)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
