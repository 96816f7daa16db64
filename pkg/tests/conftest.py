import numpy as np
import pytest

from kscontrol.spectral import KSConfig
from kscontrol import steady


@pytest.fixture(scope="session")
def cfg128():
    return KSConfig(N=128)


@pytest.fixture(scope="session")
def equilibria128(cfg128):
    """u1..u3 at N=128; Newton is expensive, solve once per session."""
    return steady.find_steady_states(cfg128)


@pytest.fixture(scope="session")
def saturated128(cfg128):
    """A statistically saturated chaotic state at N=128, lambda=1."""
    from kscontrol.spectral import integrate, noise_initial_condition

    rng = np.random.default_rng(42)
    fld = noise_initial_condition(cfg128, rng)
    n = int(round(150.0 / cfg128.dt_solution))
    return integrate(fld, cfg128, n)
