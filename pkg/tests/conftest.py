import numpy as np
import pytest

from hyperseg.rng import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def g(rng):
    return rng.stream("test")


@pytest.fixture
def rand_image(g):
    return g.uniform(0.0, 1.0, size=(3, 64, 64))
