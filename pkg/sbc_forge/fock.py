import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from cachetools import LRUCache, cached
from scipy import constants
from scipy.special import gammaln

from sbc_forge import DEFAULT_MAX_TAIL_MASS, DEFAULT_N_MAX, MHZ

logger = logging.getLogger(__name__)


class TruncationError(ValueError):
    def __init__(self, tail_mass, threshold, n_max):
        self.tail_mass = tail_mass
        self.threshold = threshold
        self.n_max = n_max
        super().__init__(
            f"Thermal tail above n_max={n_max} holds {tail_mass:.3g} of the population (limit {threshold:.3g})"
        )


@dataclass(frozen=True)
class TrapMode:
    frequency: float
    eta: float
    n_max: int = DEFAULT_N_MAX
    name: str = "axial"

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError(f"Trap frequency must be positive, got {self.frequency}")
        if self.eta <= 0:
            raise ValueError(f"Lamb-Dicke parameter must be positive, got {self.eta}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")

    @classmethod
    def from_mhz(cls, frequency_mhz, eta, n_max=DEFAULT_N_MAX, name="axial"):
        return cls(frequency=frequency_mhz * MHZ, eta=eta, n_max=n_max, name=name)

    @property
    def levels(self):
        return self.n_max + 1

    @property
    def frequency_mhz(self):
        return self.frequency / MHZ


@dataclass(frozen=True)
class ThermalSpec:
    """
    Either a mean occupation or a temperature (kelvin) plus the mode whose
    frequency turns it into one.
    """

    nbar: Optional[float] = None
    temperature: Optional[float] = None
    mode: Optional[TrapMode] = None

    def __post_init__(self):
        if (self.nbar is None) == (self.temperature is None):
            raise ValueError("ThermalSpec needs exactly one of nbar or temperature")
        if self.nbar is not None and self.nbar < 0:
            raise ValueError(f"nbar must be >= 0, got {self.nbar}")
        if self.temperature is not None and self.mode is None:
            raise ValueError("A temperature needs a TrapMode to convert it to nbar")

    def resolve_nbar(self):
        if self.nbar is not None:
            return float(self.nbar)
        return nbar_from_temperature(self.temperature, self.mode)


@dataclass(frozen=True)
class ThermalDistribution:
    populations: np.ndarray
    tail_mass: float
    nbar: float

    @property
    def n_max(self):
        return len(self.populations) - 1

    def mean(self):
        return float(self.populations @ np.arange(len(self.populations)))


def laguerre(n, a, x):
    if n == 0:
        return 1.0
    previous, current = 1.0, 1.0 + a - x
    for k in range(1, n):
        previous, current = current, ((2 * k + 1 + a - x) * current - (k + a) * previous) / (k + 1)
    return current


def _laguerre_grid(n_max, x):
    """L_k^d(x) for 0 <= k, d <= n_max, indexed [k, d]."""
    a = np.arange(n_max + 1, dtype=float)
    grid = np.empty((n_max + 1, n_max + 1))
    grid[0] = 1.0
    if n_max >= 1:
        grid[1] = 1.0 + a - x
    for k in range(1, n_max):
        grid[k + 1] = ((2 * k + 1 + a - x) * grid[k] - (k + a) * grid[k - 1]) / (k + 1)
    return grid


def rabi_frequency(n, n_prime, eta, omega0=1.0):
    if n < 0 or n_prime < 0:
        raise ValueError(f"Fock levels must be >= 0, got ({n}, {n_prime})")
    lower, upper = min(n, n_prime), max(n, n_prime)
    delta = upper - lower
    x = eta * eta
    log_ratio = 0.5 * (math.lgamma(lower + 1) - math.lgamma(upper + 1))
    return omega0 * math.exp(-x / 2 + log_ratio) * eta**delta * laguerre(lower, delta, x)


def spectator_rabi_factor(m, eta_spec):
    return rabi_frequency(m, m, eta_spec, 1.0)


class RabiTable:
    """
    Rabi frequencies in units of the carrier Rabi frequency for every pair of
    levels up to n_max, built once and read-only afterwards.
    """

    def __init__(self, eta, n_max):
        if eta < 0:
            raise ValueError(f"Lamb-Dicke parameter must be >= 0, got {eta}")
        self.eta = eta
        self.n_max = n_max
        self._matrix = self._build(eta, n_max)
        self._matrix.setflags(write=False)

    @staticmethod
    def _build(eta, n_max):
        if eta == 0:
            return np.eye(n_max + 1)
        levels = np.arange(n_max + 1)
        lower = np.minimum.outer(levels, levels)
        delta = np.abs(np.subtract.outer(levels, levels))
        x = eta * eta
        log_ratio = 0.5 * (gammaln(lower + 1) - gammaln(lower + delta + 1))
        grid = _laguerre_grid(n_max, x)
        return np.exp(-x / 2 + log_ratio) * eta**delta * grid[lower, delta]

    @property
    def matrix(self):
        return self._matrix

    def __call__(self, n_prime, n):
        return float(self._matrix[n_prime, n])

    def __repr__(self):
        return f"{self.__class__.__name__}(eta={self.eta}, n_max={self.n_max})"

    def carrier(self):
        return np.diag(self._matrix).copy()

    def sideband(self, beta):
        """Red sideband |n> -> |n - beta> per starting level n, zero below beta."""
        values = np.zeros(self.n_max + 1)
        n = np.arange(beta, self.n_max + 1)
        values[beta:] = self._matrix[n - beta, n]
        return values

    def blue_sideband(self, beta):
        """Blue sideband |n> -> |n + beta> per starting level n, zero above n_max - beta."""
        values = np.zeros(self.n_max + 1)
        n = np.arange(0, self.n_max + 1 - beta)
        values[: len(n)] = self._matrix[n + beta, n]
        return values


@cached(cache=LRUCache(maxsize=32))
def rabi_table(eta, n_max):
    logger.debug("Building Rabi table for eta=%s n_max=%s", eta, n_max)
    return RabiTable(eta, n_max)


def calibrate_omega0(pi_time_n1, eta):
    if pi_time_n1 <= 0:
        raise ValueError(f"pi time must be positive, got {pi_time_n1}")
    return math.pi / (pi_time_n1 * abs(rabi_frequency(1, 0, eta)))


def eta_for_frequency(eta_ref, frequency_ref, frequency):
    return eta_ref * math.sqrt(frequency_ref / frequency)


def nbar_from_temperature(temperature, mode):
    if temperature <= 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    x = constants.hbar * mode.frequency / (constants.k * temperature)
    if x > 700:
        return 0.0
    return 1 / math.expm1(x)


def thermal_distribution(spec, n_max, max_tail_mass=DEFAULT_MAX_TAIL_MASS):
    nbar = spec.resolve_nbar()
    levels = np.arange(n_max + 1)

    if nbar == 0:
        populations = np.zeros(n_max + 1)
        populations[0] = 1.0
        return ThermalDistribution(populations, 0.0, 0.0)

    ratio = nbar / (1 + nbar)
    populations = np.exp(levels * math.log(ratio) - math.log1p(nbar))
    tail_mass = ratio ** (n_max + 1)

    if tail_mass > max_tail_mass:
        raise TruncationError(tail_mass, max_tail_mass, n_max)
    if tail_mass > max_tail_mass / 2:
        logger.warning("Thermal tail mass %.3g is close to the %.3g limit at n_max=%s", tail_mass, max_tail_mass, n_max)

    return ThermalDistribution(populations / populations.sum(), tail_mass, nbar)
