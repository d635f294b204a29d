import numpy as np
import pytest

LAYOUT_4X4 = np.arange(16).reshape(4, 4)


@pytest.fixture
def layout():
    return LAYOUT_4X4.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
