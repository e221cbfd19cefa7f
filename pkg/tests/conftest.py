import numpy as np
import pytest
from scipy.linalg import expm

from sbc_forge import US
from sbc_forge.bloch import PhysicsParams
from sbc_forge.fock import calibrate_omega0, rabi_table


class ConfigStub:
    """The attributes logging and statsd setup read off a RunConfig."""

    def __init__(self, **overrides):
        self.scenario = "single_ion"
        self.log_level = "INFO"
        self.log_format = "text"
        self.log_path = None
        self.statsd_enabled = False
        self.statsd_host = "localhost"
        self.statsd_port = 8125
        self.statsd_prefix = "sbc-forge"
        self.__dict__.update(overrides)


@pytest.fixture
def config_stub():
    return ConfigStub


@pytest.fixture(scope="session")
def displacement_oracle():
    """
    <n'|exp(i eta (a + a^dagger))|n> from a 400-level truncated operator,
    rotated by (-i)^|n' - n| so it compares with the real Rabi factors.
    """
    cache = {}

    def matrix_elements(eta, size=61, truncation=400):
        if eta not in cache:
            lowering = np.diag(np.sqrt(np.arange(1, truncation)), k=1)
            displacement = expm(1j * eta * (lowering + lowering.T))[:size, :size]
            levels = np.arange(size)
            delta = np.abs(np.subtract.outer(levels, levels))
            cache[eta] = (displacement * (-1j) ** delta).real
        return cache[eta]

    return matrix_elements


@pytest.fixture
def single_ion_physics():
    return PhysicsParams(omega0=calibrate_omega0(16 * US, 0.3))


@pytest.fixture
def small_table():
    return rabi_table(0.3, 40)
