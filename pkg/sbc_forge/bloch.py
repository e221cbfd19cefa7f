import logging
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Tuple, Union

import numpy as np
from cachetools import LRUCache, cached
from cachetools.keys import hashkey
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from sbc_forge import (
    DEFAULT_ETA_TILDE,
    DEFAULT_GAMMA_EFF,
    DEFAULT_PULSE_AREA_REDUCTION,
    DEFAULT_REPUMP_GAP,
    DEFAULT_REPUMP_PULSE,
    DEFAULT_XI,
    SIGNAL_AMPLITUDE,
    SIGNAL_OFFSET,
)
from sbc_forge.fock import RabiTable

logger = logging.getLogger(__name__)

INTEGRATORS = ("rk", "expm")


class IntegrationError(ArithmeticError):
    pass


class TraceDriftError(IntegrationError):
    def __init__(self, drift, pulse_index=None):
        self.drift = drift
        self.pulse_index = pulse_index
        where = "" if pulse_index is None else f" at pulse {pulse_index}"
        super().__init__(f"Trace drifted by {drift:.3g}{where}")

    def at_pulse(self, pulse_index):
        return type(self)(self.drift, pulse_index)


@dataclass(frozen=True)
class PhysicsParams:
    omega0: Union[float, Tuple[float, ...]]
    gamma_eff: float = DEFAULT_GAMMA_EFF
    xi: float = DEFAULT_XI
    eta_tilde: float = DEFAULT_ETA_TILDE
    pulse_area_reduction: float = DEFAULT_PULSE_AREA_REDUCTION
    repump_pulse: float = DEFAULT_REPUMP_PULSE
    repump_gap: float = DEFAULT_REPUMP_GAP
    # Background scattering of the upper state, active whether or not the quench is on.
    gamma_background: float = 0.0
    integrator: str = "rk"
    rtol: float = 1e-8
    atol: float = 1e-12
    trace_tolerance: float = 1e-6

    def __post_init__(self):
        if not 0 <= self.xi < 1:
            raise ValueError(f"xi must be in [0, 1), got {self.xi}")
        if self.gamma_eff < 0 or self.gamma_background < 0:
            raise ValueError("Decay rates must be >= 0")
        if self.pulse_area_reduction < 0:
            raise ValueError(f"pulse_area_reduction must be >= 0, got {self.pulse_area_reduction}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if min(np.atleast_1d(self.omega0)) < 0:
            raise ValueError("omega0 must be >= 0")

    @staticmethod
    def xi_from_eta_tilde(eta_tilde):
        return round(3 * eta_tilde**2 / 0.05) * 0.05

    def carrier_rabi(self, mode_index=0):
        if isinstance(self.omega0, tuple):
            return self.omega0[mode_index]
        return self.omega0

    def decay_rate(self, quench_on):
        return self.gamma_background + (self.gamma_eff if quench_on else 0.0)


@dataclass(frozen=True, eq=False)
class Coherences:
    """
    rho_{down n, up n-beta} for the pairs coupled by one pulse, indexed by
    the lower-state level on the addressed axis.
    """

    mode_index: int
    beta: int
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class MotionalState:
    pop_down: np.ndarray
    pop_up: np.ndarray
    coherences: Optional[Coherences] = None

    def __post_init__(self):
        if self.pop_down.shape != self.pop_up.shape:
            raise ValueError(f"Population shapes differ: {self.pop_down.shape} and {self.pop_up.shape}")

    @classmethod
    def fock(cls, levels, dims):
        pop_down = np.zeros(dims)
        pop_down[tuple(levels)] = 1.0
        return cls(pop_down, np.zeros(dims))

    @classmethod
    def ground(cls, dims):
        return cls.fock((0,) * len(dims), dims)

    @classmethod
    def thermal(cls, distributions):
        pop_down = reduce(np.multiply.outer, [distribution.populations for distribution in distributions])
        return cls(np.asarray(pop_down, dtype=float), np.zeros(np.shape(pop_down)))

    @property
    def dims(self):
        return self.pop_down.shape

    @property
    def n_modes(self):
        return self.pop_down.ndim

    def trace(self):
        return float(self.pop_down.sum() + self.pop_up.sum())

    def marginal(self, mode_index=0):
        joint = self.pop_down + self.pop_up
        other_axes = tuple(axis for axis in range(joint.ndim) if axis != mode_index)
        return joint.sum(axis=other_axes) if other_axes else joint


def _tables_for(table, n_modes):
    tables = (table,) if isinstance(table, RabiTable) else tuple(table)
    if len(tables) != n_modes:
        raise ValueError(f"Need one Rabi table per mode ({n_modes}), got {len(tables)}")
    return tables


def spectator_factors(tables, dims, mode_index):
    """Carrier factors of every spectator level, flattened in the order of the remaining axes."""
    factors = [tables[axis].carrier()[: dims[axis]] for axis in range(len(dims)) if axis != mode_index]
    return reduce(np.kron, factors, np.ones(1))


def _check_levels(tables, dims):
    for table, size in zip(tables, dims):
        if table.n_max < size - 1:
            raise ValueError(f"{table!r} is too small for a state with {size} levels")


def _rk_evolve(down, up, coherence, coupling, gamma, xi, beta, duration, params):
    levels, blocks = down.shape

    def rhs(_t, y):
        d, u, c = y.reshape(3, levels, blocks)
        flow = coupling * c
        d_dot = -flow + (1 - xi) * gamma * u
        d_dot[1:] += xi * gamma * u[:-1]
        d_dot[-1] += xi * gamma * u[-1]
        u_dot = -gamma * u
        u_dot[: levels - beta] += flow[beta:]
        c_dot = -0.5 * gamma * c
        c_dot[beta:] += 0.5 * coupling[beta:] * (d[beta:] - u[: levels - beta])
        return np.concatenate([d_dot, u_dot, c_dot]).ravel()

    fastest = max(float(np.abs(coupling).max(initial=0.0)), gamma)
    max_step = 1 / (50 * fastest) if fastest > 0 else np.inf
    solution = solve_ivp(
        rhs,
        (0.0, duration),
        np.concatenate([down, up, coherence]).ravel(),
        method="DOP853",
        rtol=params.rtol,
        atol=params.atol,
        max_step=max_step,
    )
    if not solution.success:
        raise IntegrationError(f"Pulse integration failed: {solution.message}")
    return solution.y[:, -1].reshape(3, levels, blocks)


def _generator(coupling, gamma, xi, beta):
    """
    Dense generator of one spectator block, ordered as lower-state
    populations, upper-state populations, then coherences.
    """
    levels = len(coupling)
    down, up, coh = 0, levels, 2 * levels
    generator = np.zeros((3 * levels, 3 * levels))
    n = np.arange(levels)
    generator[down + n, up + n] += (1 - xi) * gamma
    generator[down + n[1:], up + n[:-1]] += xi * gamma
    generator[down + levels - 1, up + levels - 1] += xi * gamma
    generator[up + n, up + n] = -gamma
    generator[coh + n, coh + n] = -0.5 * gamma

    coupled = n[beta:]
    generator[down + coupled, coh + coupled] = -coupling[coupled]
    generator[up + coupled - beta, coh + coupled] = coupling[coupled]
    generator[coh + coupled, down + coupled] = 0.5 * coupling[coupled]
    generator[coh + coupled, up + coupled - beta] = -0.5 * coupling[coupled]
    return generator


def _propagator_key(addressed, spectators, beta, omega0, gamma, xi, duration):
    return hashkey(addressed.tobytes(), spectators.tobytes(), beta, omega0, gamma, xi, duration)


@cached(cache=LRUCache(maxsize=32), key=_propagator_key)
def _block_propagators(addressed, spectators, beta, omega0, gamma, xi, duration):
    logger.debug("Building %s propagators for beta=%s duration=%.4g", len(spectators), beta, duration)
    return np.stack(
        [expm(_generator(omega0 * factor * addressed, gamma, xi, beta) * duration) for factor in spectators]
    )


def _expm_evolve(down, up, coherence, addressed, spectators, omega0, gamma, xi, beta, duration):
    levels, blocks = down.shape
    propagators = _block_propagators(addressed, spectators, beta, omega0, gamma, xi, duration)
    y = np.concatenate([down, up, coherence]).T
    evolved = np.einsum("sij,sj->si", propagators, y)
    return evolved.T.reshape(3, levels, blocks)


def evolve_rsb_pulse(state, mode_index, beta, duration, params, table, quench_on=True):
    """
    Evolve one red sideband pulse of order ``beta`` on ``mode_index``.

    ``table`` is the mode's RabiTable, or one table per mode for multi-mode
    states; spectator tables supply the carrier factors that scale the
    addressed coupling at each spectator level.
    """
    if duration < 0:
        raise ValueError(f"Pulse duration must be >= 0, got {duration}")
    if beta < 1:
        raise ValueError(f"Sideband order must be >= 1, got {beta}")

    tables = _tables_for(table, state.n_modes)
    dims = state.dims
    _check_levels(tables, dims)
    if beta > dims[mode_index] - 1:
        raise ValueError(f"Sideband order {beta} exceeds n_max={dims[mode_index] - 1}")

    effective = duration - params.pulse_area_reduction
    if effective <= 0:
        return state

    omega0 = params.carrier_rabi(mode_index)
    gamma = params.decay_rate(quench_on)
    xi = params.xi
    levels = dims[mode_index]

    def to_blocks(array):
        return np.moveaxis(array, mode_index, 0).reshape(levels, -1)

    def from_blocks(array):
        moved_shape = (levels,) + tuple(size for axis, size in enumerate(dims) if axis != mode_index)
        return np.moveaxis(array.reshape(moved_shape), 0, mode_index)

    down, up = to_blocks(state.pop_down), to_blocks(state.pop_up)
    coherence_real = np.zeros_like(down)
    coherence = np.zeros_like(down)
    incoming = state.coherences
    if incoming is not None and (incoming.mode_index, incoming.beta) == (mode_index, beta):
        coherence_real = to_blocks(incoming.values.real)
        coherence = to_blocks(incoming.values.imag)

    addressed = tables[mode_index].sideband(beta)[:levels]
    spectators = spectator_factors(tables, dims, mode_index)
    trace_before = down.sum() + up.sum()

    if params.integrator == "expm":
        down, up, coherence = _expm_evolve(
            down, up, coherence, addressed, spectators, omega0, gamma, xi, beta, effective
        )
    else:
        coupling = omega0 * np.outer(addressed, spectators)
        down, up, coherence = _rk_evolve(down, up, coherence, coupling, gamma, xi, beta, effective, params)

    drift = abs(down.sum() + up.sum() - trace_before)
    if drift > params.trace_tolerance:
        raise TraceDriftError(drift)

    down = np.clip(down, 0.0, None)
    up = np.clip(up, 0.0, None)
    coherence_real = coherence_real * np.exp(-0.5 * gamma * effective)

    return MotionalState(
        from_blocks(down),
        from_blocks(up),
        Coherences(mode_index, beta, from_blocks(coherence_real + 1j * coherence)),
    )


def apply_repump(state):
    return MotionalState(state.pop_down + state.pop_up, np.zeros_like(state.pop_up))


def ground_state_population(state, mode_index=0):
    return float(state.marginal(mode_index)[0])


def mean_occupation(state, mode_index=0):
    marginal = state.marginal(mode_index)
    return float(marginal @ np.arange(len(marginal)))


def apply_signal_correction(p0, a=SIGNAL_AMPLITUDE, b=SIGNAL_OFFSET):
    return a * (p0 - b)

