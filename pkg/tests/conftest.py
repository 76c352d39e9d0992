import numpy as np
import pytest

from transportmc import Box, Cosine1D, LangevinParams, SystemSpec


@pytest.fixture
def torus_system():
    """Default 1D test system: V = cos q on the 2*pi torus, beta = gamma = 1."""
    params = LangevinParams(beta=1.0, gamma=1.0, mass=1.0, dt=0.01)
    return SystemSpec(Cosine1D(1.0), params, Box((2.0 * np.pi,)))
