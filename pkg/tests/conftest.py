import warnings

import numpy as np
import pytest
from hypothesis import settings

warnings.filterwarnings("ignore", message=".*TBB.*")

settings.register_profile("slow-jit", deadline=None, max_examples=50)
settings.load_profile("slow-jit")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
