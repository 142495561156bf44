import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from tordistill.data import make_sinusoid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_sinusoid():
    return make_sinusoid(300, noise_std=0.3, seed=7)


@pytest.fixture
def noisy_sinusoid():
    return make_sinusoid(600, noise_std=3.0, seed=11)
