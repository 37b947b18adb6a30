import numpy as np
import pytest

from thermistor2d.mesh import Grid2D


@pytest.fixture
def unit17() -> Grid2D:
    return Grid2D.unit_square(16)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
