import enum
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from sbc_forge import DEFAULT_N_MAX
from sbc_forge.bloch import spectator_factors
from sbc_forge.fock import RabiTable, ThermalSpec, rabi_table, thermal_distribution

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 4


class FitError(RuntimeError):
    pass


class DegenerateTraceError(FitError):
    pass


class FitConvergenceError(FitError):
    def __init__(self, message, status=None, nfev=None, cost=None):
        self.status = status
        self.nfev = nfev
        self.cost = cost
        super().__init__(f"{message} (status={status}, nfev={nfev}, cost={cost})")


class InvalidSidebandDataError(ValueError):
    pass


class FitObservable(str, enum.Enum):
    GROUND_POPULATION = "ground_population"
    MEAN_OCCUPATION = "mean_occupation"


@dataclass(frozen=True, eq=False)
class CoolingTrace:
    """
    Ground-state population and mean occupation per mode, sampled at the
    end of every repump. ``ground_population`` and ``mean_occupation``
    have shape (samples, modes).
    """

    times: np.ndarray
    ground_population: np.ndarray
    mean_occupation: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        p0 = np.asarray(self.ground_population, dtype=float).reshape(len(times), -1)
        nbar = np.asarray(self.mean_occupation, dtype=float).reshape(len(times), -1)
        if np.any(np.diff(times) <= 0):
            raise ValueError("Trace times must be strictly increasing")
        if np.any(p0 < -1e-9) or np.any(p0 > 1 + 1e-9):
            raise ValueError("Ground-state populations must lie in [0, 1]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "ground_population", p0)
        object.__setattr__(self, "mean_occupation", nbar)

    @classmethod
    def single(cls, times, p0, nbar=None):
        p0 = np.asarray(p0, dtype=float)
        if nbar is None:
            nbar = 1 / np.clip(p0, 1e-12, None) - 1
        return cls(times, p0, nbar)

    def __len__(self):
        return len(self.times)

    @property
    def n_modes(self):
        return self.ground_population.shape[1]

    @property
    def p0(self):
        return self._single_column(self.ground_population)

    @property
    def nbar(self):
        return self._single_column(self.mean_occupation)

    def _single_column(self, values):
        if self.n_modes != 1:
            raise ValueError(f"Trace holds {self.n_modes} modes, select one with for_mode()")
        return values[:, 0]

    def for_mode(self, mode_index):
        return CoolingTrace(
            self.times, self.ground_population[:, mode_index], self.mean_occupation[:, mode_index]
        )

    def final_samples(self):
        return tuple(self.ground_population[-1].tolist()), tuple(self.mean_occupation[-1].tolist())


@dataclass(frozen=True)
class CoolingFit:
    nbar_i: float
    nbar_f: float
    t0: float
    residual_norm: float

    @property
    def rate(self):
        return 1 / self.t0


def occupation_model(t, nbar_i, nbar_f, t0):
    return nbar_f + (nbar_i - nbar_f) * np.exp(-np.asarray(t) / t0)


def cooling_model(t, nbar_i, nbar_f, t0):
    return 1 / (1 + occupation_model(t, nbar_i, nbar_f, t0))


def thermal_occupation(p0):
    """Mean occupation of the thermal state with ground-state population ``p0``."""
    return 1 / np.clip(p0, 1e-12, None) - 1


def _observed(trace, observable):
    if observable is FitObservable.MEAN_OCCUPATION:
        return trace.nbar, trace.nbar
    return trace.p0, thermal_occupation(trace.p0)


def _check_trace(trace, observed):
    if len(trace) < MIN_FIT_SAMPLES:
        raise DegenerateTraceError(f"Need at least {MIN_FIT_SAMPLES} samples to fit, got {len(trace)}")
    if np.ptp(observed) < 1e-9:
        raise DegenerateTraceError("The cooling trace is flat, the time constant is unidentifiable")


def _half_crossing_t0(times, nbar, nbar_i, nbar_f):
    half = (nbar_i + nbar_f) / 2
    crossed = np.nonzero((nbar[:-1] - half) * (nbar[1:] - half) <= 0)[0]
    if len(crossed):
        k = crossed[0]
        span = nbar[k + 1] - nbar[k]
        fraction = 0.5 if span == 0 else (half - nbar[k]) / span
        t_half = times[k] + fraction * (times[k + 1] - times[k])
    else:
        t_half = (times[0] + times[-1]) / 2
    return max(t_half, (times[-1] - times[0]) / 1e3, 1e-12) / math.log(2)


def fit_cooling_constants(
    traces: Sequence[CoolingTrace],
    shared: Optional[Tuple[float, float]] = None,
    observable: FitObservable = FitObservable.GROUND_POPULATION,
):
    """
    Fit every trace with its own T_0. The initial and final occupations are
    shared across traces, fitted unless given as ``shared``. The ground
    population follows the thermal model, the mean occupation follows the
    exponential decay itself.
    """
    if not traces:
        raise ValueError("No traces to fit")
    observable = FitObservable(observable)
    model = cooling_model if observable is FitObservable.GROUND_POPULATION else occupation_model
    observed = [_observed(trace, observable) for trace in traces]
    for trace, (values, _) in zip(traces, observed):
        _check_trace(trace, values)

    if shared is None:
        nbar_i = float(np.mean([occupation[0] for _, occupation in observed]))
        nbar_f = float(np.mean([occupation[-1] for _, occupation in observed]))
    else:
        nbar_i, nbar_f = shared
    if abs(nbar_i - nbar_f) < 1e-6 * (1 + abs(nbar_i)):
        raise DegenerateTraceError("Initial and final occupations coincide, the time constant is unidentifiable")

    log_t0 = [
        math.log(_half_crossing_t0(trace.times, occupation, nbar_i, nbar_f))
        for trace, (_, occupation) in zip(traces, observed)
    ]
    x0 = np.array(log_t0 if shared is not None else [nbar_i, nbar_f, *log_t0])

    def unpack(x):
        if shared is not None:
            return shared[0], shared[1], np.exp(x)
        return x[0], x[1], np.exp(x[2:])

    def residuals(x):
        fit_i, fit_f, t0s = unpack(x)
        return np.concatenate(
            [model(trace.times, fit_i, fit_f, t0) - values for trace, (values, _), t0 in zip(traces, observed, t0s)]
        )

    with np.errstate(over="ignore"):
        result = least_squares(residuals, x0, method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12)
    if not result.success or not np.all(np.isfinite(result.x)):
        raise FitConvergenceError(result.message, result.status, result.nfev, result.cost)

    fit_i, fit_f, t0s = unpack(result.x)
    fits = []
    for trace, (values, _), t0 in zip(traces, observed, t0s):
        residual = model(trace.times, fit_i, fit_f, t0) - values
        fits.append(CoolingFit(float(fit_i), float(fit_f), float(t0), float(np.linalg.norm(residual))))
    logger.debug("Fitted %s traces on %s: nbar_i=%.4g nbar_f=%.4g", len(traces), observable.value, fit_i, fit_f)
    return fits


def fit_cooling_constant(trace, shared=None, observable=FitObservable.GROUND_POPULATION):
    return fit_cooling_constants([trace], shared, observable)[0]


def extract_nbar(rsb_excitation, bsb_excitation, background=0.0):
    rsb = rsb_excitation - background
    bsb = bsb_excitation - background
    if rsb < 0 or rsb >= bsb:
        raise InvalidSidebandDataError(
            f"Need 0 <= red < blue after background subtraction, got red={rsb:.4g} blue={bsb:.4g}"
        )
    return rsb / (bsb - rsb)


@dataclass(frozen=True, eq=False)
class StrategyMap:
    """Most efficient red sideband order per Fock level, index 0 unused."""

    eta: float
    best_order: np.ndarray

    @property
    def n_max(self):
        return len(self.best_order) - 1

    def __getitem__(self, n):
        return int(self.best_order[n])

    def rows(self):
        return [(n, int(beta)) for n, beta in enumerate(self.best_order) if n >= 1]

    def max_order(self):
        return int(self.best_order[1:].max(initial=0))

    def bands(self):
        """Contiguous (beta, first_n, last_n) level ranges."""
        bands = []
        for n, beta in self.rows():
            if bands and bands[-1][0] == beta:
                bands[-1] = (beta, bands[-1][1], n)
            else:
                bands.append((beta, n, n))
        return bands


def sideband_efficiency_map(eta, n_max):
    if eta <= 0:
        raise ValueError(f"Lamb-Dicke parameter must be positive, got {eta}")
    matrix = rabi_table(eta, n_max).matrix
    best = np.zeros(n_max + 1, dtype=int)
    for n in range(1, n_max + 1):
        betas = np.arange(1, n + 1)
        efficiency = betas * np.abs(matrix[n - betas, n])
        best[n] = betas[np.argmax(efficiency)]
    return StrategyMap(eta, best)


@dataclass(frozen=True)
class Transition:
    kind: Literal["carrier", "rsb", "bsb"]
    order: int = 0

    def __post_init__(self):
        if self.kind not in ("carrier", "rsb", "bsb"):
            raise ValueError(f"Unknown transition {self.kind!r}")
        if self.kind != "carrier" and self.order < 1:
            raise ValueError(f"Sideband order must be >= 1, got {self.order}")

    @classmethod
    def carrier(cls):
        return cls("carrier")

    @classmethod
    def rsb(cls, order=1):
        return cls("rsb", order)

    @classmethod
    def bsb(cls, order=1):
        return cls("bsb", order)

    def __str__(self):
        return self.kind if self.kind == "carrier" else f"{self.kind}{self.order}"

    def rabi_factors(self, eta, levels):
        """|Omega| / Omega_0 per starting level 0 .. levels - 1."""
        table = rabi_table(eta, levels - 1 + self.order)
        if self.kind == "carrier":
            values = table.carrier()
        elif self.kind == "rsb":
            values = table.sideband(self.order)
        else:
            values = table.blue_sideband(self.order)
        return np.abs(values[:levels])


def simulate_sideband_spectrum(state, probe_time, detunings, transition, omega0, table, mode_index=0):
    """
    Excitation probability of a square probe pulse per detuning, averaged
    over the state's motional populations. Spectator modes scale the Rabi
    frequency through their carrier factors.
    """
    if probe_time <= 0:
        raise ValueError(f"Probe time must be positive, got {probe_time}")
    tables = (table,) if isinstance(table, RabiTable) else tuple(table)
    dims = state.dims
    levels = dims[mode_index]

    populations = np.moveaxis(state.pop_down + state.pop_up, mode_index, 0).reshape(levels, -1)
    addressed = transition.rabi_factors(tables[mode_index].eta, levels)
    rabi = omega0 * np.outer(addressed, np.abs(spectator_factors(tables, dims, mode_index))).ravel()
    weights = populations.ravel()

    detunings = np.asarray(detunings, dtype=float)[:, None]
    generalized = np.sqrt(rabi**2 + detunings**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        lineshape = np.where(generalized > 0, rabi**2 / generalized**2, 0.0)
    return (weights * lineshape * np.sin(generalized * probe_time / 2) ** 2).sum(axis=1)


def dominance_window(order, eta, n_max, competing_order=None):
    """Levels where ``order`` couples more strongly than ``competing_order``."""
    competing_order = competing_order or (2 if order == 1 else 1)
    table = rabi_table(eta, n_max)
    own = np.abs(table.sideband(order))
    other = np.abs(table.sideband(competing_order))
    return (own > other) & (own > 0)


def average_pi_time(order, eta, nbar, omega0, dominance_window_levels=None, n_max=DEFAULT_N_MAX):
    """
    Thermally weighted mean pi time of the order's red sideband over the
    levels in ``dominance_window_levels`` (an inclusive (first, last) level
    range), or over the levels where it beats the other order when omitted.
    """
    if nbar < 0:
        raise ValueError(f"nbar must be >= 0, got {nbar}")
    table = rabi_table(eta, n_max)
    rabi = np.abs(table.sideband(order)) * omega0

    if dominance_window_levels is None:
        mask = dominance_window(order, eta, n_max)
    else:
        first, last = dominance_window_levels
        levels = np.arange(n_max + 1)
        mask = (levels >= first) & (levels <= last) & (rabi > 0)
    if not mask.any():
        raise ValueError(f"No level in the window couples on order {order}")

    weights = thermal_distribution(ThermalSpec(nbar=nbar), n_max, max_tail_mass=1.0).populations[mask]
    pi_times = np.pi / rabi[mask]
    if weights.sum() == 0:
        return float(pi_times[0])
    return float(weights @ pi_times / weights.sum())


def mean_rabi_pi_time(eta, nbar, omega0, spectator=None, n_max=DEFAULT_N_MAX, spectator_n_max=DEFAULT_N_MAX):
    """
    pi over the first-order red sideband Rabi frequency averaged over the
    whole thermal occupation, dark ground state included. ``spectator`` is
    an (eta, nbar) pair for the other mode of a crystal, whose carrier
    factor scales the coupling.
    """
    if nbar < 0:
        raise ValueError(f"nbar must be >= 0, got {nbar}")
    weights = thermal_distribution(ThermalSpec(nbar=nbar), n_max, max_tail_mass=1.0).populations
    rabi = omega0 * float(weights @ np.abs(rabi_table(eta, n_max).sideband(1)))

    if spectator is not None:
        spectator_eta, spectator_nbar = spectator
        spectator_weights = thermal_distribution(
            ThermalSpec(nbar=spectator_nbar), spectator_n_max, max_tail_mass=1.0
        ).populations
        rabi *= float(spectator_weights @ np.abs(rabi_table(spectator_eta, spectator_n_max).carrier()))
    if rabi <= 0:
        raise ValueError("The thermal occupation does not couple on the first red sideband")
    return float(np.pi / rabi)
