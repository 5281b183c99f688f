import numpy as np
import pytest

from turbghost.model import OpticsConfig, fringe_wavenumber_from_cycles


@pytest.fixture(scope="session")
def k_650():
    """Optical wavenumber for the 650 nm default, rad/mm."""
    return OpticsConfig().k


@pytest.fixture(scope="session")
def k0_pattern():
    """Fringe wavenumber of the 3.6 cycles/mm test pattern, rad/mm."""
    return fringe_wavenumber_from_cycles(3.6)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
