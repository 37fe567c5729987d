import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vortlab.spectral import ScalarField, make_grid

settings.register_profile(
    "vortlab", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "vortlab"))


@pytest.fixture(scope="session")
def grid16():
    return make_grid(16)


@pytest.fixture(scope="session")
def grid32():
    return make_grid(32)


@pytest.fixture(scope="session")
def grid64():
    return make_grid(64)


@pytest.fixture(scope="session")
def grid128():
    return make_grid(128)


def sin1(grid):
    return ScalarField.from_modes(grid, [(1, 0, 0.0, 1.0)])


def random_field(grid, seed, kmax=None, linf=1.0):
    kmax = grid.kmax_dealias if kmax is None else kmax
    return ScalarField.random_band_limited(grid, kmax, np.random.default_rng(seed), linf=linf)
