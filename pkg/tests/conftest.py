import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
import pytest

from gllab.model import Asymmetry, Potential


@pytest.fixture(scope="session")
def quad():
    return Potential.quadratic()


@pytest.fixture(scope="session")
def cosine_pot():
    return Potential.quadratic_cosine(0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture(scope="session")
def sym():
    return Asymmetry(0.0)
