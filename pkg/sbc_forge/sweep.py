import csv
import enum
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from sbc_forge import DEFAULT_MAX_TAIL_MASS, MS, US
from sbc_forge.analysis import (
    CoolingFit,
    CoolingTrace,
    FitError,
    FitObservable,
    fit_cooling_constant,
    fit_cooling_constants,
)
from sbc_forge.bloch import (
    IntegrationError,
    MotionalState,
    PhysicsParams,
    TraceDriftError,
    apply_repump,
    apply_signal_correction,
    evolve_rsb_pulse,
    ground_state_population,
    mean_occupation,
)
from sbc_forge.clients.statsd.statsd_client import statsd_client
from sbc_forge.fock import ThermalSpec, TrapMode, rabi_table, thermal_distribution
from sbc_forge.sequencer import (
    Repump,
    RSBPulse,
    ScheduleError,
    build_high_order_schedule,
    build_single_ion_schedule,
    build_two_mode_schedule,
)
from sbc_forge.statsd_decorators import statsd

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 12
DEFAULT_COLD_NBAR = 0.01


class Scenario(str, enum.Enum):
    SINGLE_ION = "single_ion"
    TWO_MODE = "two_mode"
    HIGH_ORDER = "high_order"


class Objective(str, enum.Enum):
    MIN_T0 = "min_t0"
    MIN_MAX_MODE_T0 = "min_max_mode_t0"
    SMALLEST_COLD = "smallest_cold"


class RowStatus(str, enum.Enum):
    OK = "ok"
    TRAJECTORY_FAILED = "trajectory_failed"
    FIT_FAILED = "fit_failed"


SCHEDULE_PARAMETERS = {
    Scenario.SINGLE_ION: ("alpha", "t_r2", "t_r1"),
    Scenario.TWO_MODE: ("alpha_prime", "t_ip", "t_op"),
    Scenario.HIGH_ORDER: ("beta_max", "t_pulse"),
}
PULSE_LENGTH_PARAMETERS = {
    Scenario.SINGLE_ION: ("t_r2", "t_r1"),
    Scenario.TWO_MODE: ("t_ip", "t_op"),
    Scenario.HIGH_ORDER: ("t_pulse",),
}
PHYSICS_PARAMETERS = ("gamma_eff",)
MODE_COUNT = {Scenario.SINGLE_ION: 1, Scenario.TWO_MODE: 2, Scenario.HIGH_ORDER: 1}

# Swept parameters as they appear in config files and CSV output.
DISPLAY_UNITS = {
    "alpha": ("alpha", 1.0),
    "alpha_prime": ("alpha_prime", 1.0),
    "beta_max": ("beta_max", 1.0),
    "t_r1": ("t_r1_us", 1 / US),
    "t_r2": ("t_r2_us", 1 / US),
    "t_ip": ("t_ip_us", 1 / US),
    "t_op": ("t_op_us", 1 / US),
    "t_pulse": ("t_pulse_us", 1 / US),
    "gamma_eff": ("gamma_eff_per_ms", MS),
}


class NoSuccessfulFitsError(RuntimeError):
    pass


def display_value(param, value):
    label, scale = DISPLAY_UNITS[param]
    return label, value * scale


def _format_number(value):
    return "" if value is None else f"{value:.10g}"


@dataclass(frozen=True)
class SweepPlan:
    scenario: Scenario
    physics: PhysicsParams
    modes: Tuple[TrapMode, ...]
    initial: Tuple[ThermalSpec, ...]
    schedule_parameters: Dict[str, float]
    swept_param: str
    values: Tuple[float, ...]
    cooling_times: Tuple[float, ...]
    quench_on: bool = True
    workers: int = 1
    expected_t0: Optional[float] = None
    max_tail_mass: float = DEFAULT_MAX_TAIL_MASS
    fit_observable: FitObservable = FitObservable.GROUND_POPULATION

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "fit_observable", FitObservable(self.fit_observable))
        if len(self.modes) != MODE_COUNT[self.scenario] or len(self.initial) != len(self.modes):
            raise ValueError(f"{self.scenario.value} needs {MODE_COUNT[self.scenario]} modes and initial states")
        if self.swept_param not in SCHEDULE_PARAMETERS[self.scenario] + PHYSICS_PARAMETERS:
            raise ValueError(f"Cannot sweep {self.swept_param!r} in a {self.scenario.value} plan")
        missing = set(SCHEDULE_PARAMETERS[self.scenario]) - set(self.schedule_parameters) - {self.swept_param}
        if missing:
            raise ValueError(f"Missing schedule parameters: {sorted(missing)}")
        if not self.values:
            raise ValueError("A sweep needs at least one value")
        steps = np.diff(self.values)
        if len(steps) and not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("Swept values must be strictly monotone")
        times = np.asarray(self.cooling_times)
        if not len(times) or np.any(times <= 0) or np.any(np.diff(times) <= 0):
            raise ValueError("Cooling times must be positive and strictly increasing")
        if self.expected_t0 is not None and times[-1] < 7 * self.expected_t0:
            raise ValueError(f"Cooling grid ends before 7 x T_0 ({7 * self.expected_t0 / US:g} us)")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    @property
    def n_modes(self):
        return len(self.modes)

    def physics_for(self, value):
        if self.swept_param == "gamma_eff":
            return replace(self.physics, gamma_eff=value)
        return self.physics

    def schedule_for(self, value, cooling_time):
        parameters = dict(self.schedule_parameters)
        if self.swept_param in SCHEDULE_PARAMETERS[self.scenario]:
            parameters[self.swept_param] = value
        physics = self.physics_for(value)
        return build_schedule(
            self.scenario,
            parameters,
            cooling_time,
            quench_on=self.quench_on,
            repump=Repump(physics.repump_pulse, physics.repump_gap),
        )


class SweepRow(NamedTuple):
    value: float
    status: RowStatus
    fits: Tuple[Optional[CoolingFit], ...]
    traces: Optional[Tuple[CoolingTrace, ...]]
    message: str = ""

    @property
    def ok(self):
        return self.status is RowStatus.OK


@dataclass(frozen=True)
class SweepResult:
    scenario: Scenario
    swept_param: str
    n_modes: int
    rows: Tuple[SweepRow, ...] = field(default_factory=tuple)

    def successful_rows(self):
        return [row for row in self.rows if row.ok]


def build_schedule(scenario, parameters, cooling_time, *, quench_on=True, repump=Repump()):
    scenario = Scenario(scenario)
    if scenario is Scenario.SINGLE_ION:
        return build_single_ion_schedule(
            cooling_time,
            parameters["alpha"],
            parameters["t_r2"],
            parameters["t_r1"],
            quench_on=quench_on,
            repump=repump,
        )
    if scenario is Scenario.TWO_MODE:
        return build_two_mode_schedule(
            cooling_time,
            parameters["alpha_prime"],
            parameters["t_ip"],
            parameters["t_op"],
            quench_on=quench_on,
            repump=repump,
        )
    return build_high_order_schedule(
        cooling_time, parameters["beta_max"], parameters["t_pulse"], quench_on=quench_on, repump=repump
    )


def minimum_cooling_time(scenario, parameters, swept_param=None, values=()):
    """Longest pulse any schedule of the plan can use, the shortest T_c worth sampling."""
    keys = PULSE_LENGTH_PARAMETERS[Scenario(scenario)]
    lengths = [parameters[key] for key in keys if key in parameters and key != swept_param]
    if swept_param in keys:
        lengths += list(values)
    return max(lengths, default=0.0)


def cooling_grid(t_c_max, points=DEFAULT_GRID_POINTS, minimum=0.0):
    if t_c_max <= 0:
        raise ValueError(f"Cooling time must be positive, got {t_c_max}")
    lower = max(t_c_max / 50, minimum)
    if points < 2 or lower >= t_c_max:
        return (float(t_c_max),)
    grid = np.geomspace(lower, t_c_max, points)
    grid[-1] = t_c_max
    return tuple(float(t) for t in grid)


def initial_state(modes, specs, max_tail_mass=DEFAULT_MAX_TAIL_MASS):
    return MotionalState.thermal(
        [thermal_distribution(spec, mode.n_max, max_tail_mass) for spec, mode in zip(specs, modes)]
    )


def _observables(state):
    return (
        [ground_state_population(state, index) for index in range(state.n_modes)],
        [mean_occupation(state, index) for index in range(state.n_modes)],
    )


def play_schedule(schedule, initial, params, modes):
    """
    Play ``schedule`` from ``initial`` and sample every mode after each
    repump, starting with the initial state at t = 0. Time counts RSB
    pulse durations only. Returns the final state and the trace.
    """
    if len(modes) != initial.n_modes:
        raise ValueError(f"State has {initial.n_modes} modes but {len(modes)} were given")
    tables = [rabi_table(mode.eta, mode.n_max) for mode in modes]

    state = initial
    elapsed = 0.0
    p0, nbar = _observables(state)
    times, ground, occupation = [0.0], [p0], [nbar]

    pulse_index = 0
    for event in schedule:
        if isinstance(event, RSBPulse):
            try:
                state = evolve_rsb_pulse(
                    state, event.mode_index, event.beta, event.duration, params, tables, event.quench_on
                )
            except TraceDriftError as e:
                raise e.at_pulse(pulse_index) from e
            elapsed += event.duration
            pulse_index += 1
        elif isinstance(event, Repump):
            state = apply_repump(state)
            p0, nbar = _observables(state)
            times.append(elapsed)
            ground.append(p0)
            occupation.append(nbar)

    ground = np.clip(np.asarray(ground), 0.0, 1.0)
    logger.debug("Trajectory of %s pulses ended at nbar=%s", pulse_index, occupation[-1])
    return state, CoolingTrace(np.asarray(times), ground, np.asarray(occupation))


@statsd(namespace="sweep")
def run_trajectory(schedule, initial, params, modes):
    return play_schedule(schedule, initial, params, modes)[1]


class _Endpoint(NamedTuple):
    p0: Tuple[float, ...]
    nbar: Tuple[float, ...]
    error: Optional[str] = None


def _sample_endpoint(plan, value, cooling_time):
    modes = plan.modes
    try:
        schedule = plan.schedule_for(value, cooling_time)
        initial = initial_state(modes, plan.initial, plan.max_tail_mass)
        trace = run_trajectory(schedule, initial, plan.physics_for(value), modes)
    except (IntegrationError, ScheduleError) as e:
        return _Endpoint((), (), str(e))
    p0, nbar = trace.final_samples()
    return _Endpoint(p0, nbar)


def _traces_for(plan, initial, endpoints):
    times = np.array((0.0, *plan.cooling_times))
    initial_p0, initial_nbar = _observables(initial)
    return tuple(
        CoolingTrace(
            times,
            [initial_p0[mode], *(endpoint.p0[mode] for endpoint in endpoints)],
            [initial_nbar[mode], *(endpoint.nbar[mode] for endpoint in endpoints)],
        )
        for mode in range(plan.n_modes)
    )


def _fit_mode(traces, observable=FitObservable.GROUND_POPULATION):
    """Joint fit over every value; independent fits per value when that fails."""
    try:
        return [(fit, None) for fit in fit_cooling_constants(traces, observable=observable)]
    except FitError as e:
        logger.warning("Joint fit failed (%s), fitting each point separately", e)
    outcomes = []
    for trace in traces:
        try:
            outcomes.append((fit_cooling_constant(trace, observable=observable), None))
        except FitError as e:
            outcomes.append((None, str(e)))
    return outcomes


def reset_worker_metrics():
    # forked workers inherit the parent socket
    statsd_client.reset()


@statsd(namespace="sweep")
def run_sweep(plan):
    initial = initial_state(plan.modes, plan.initial, plan.max_tail_mass)
    tasks = [(value, cooling_time) for value in plan.values for cooling_time in plan.cooling_times]
    logger.info(
        "Sweeping %s over %s values x %s cooling times on %s workers",
        plan.swept_param,
        len(plan.values),
        len(plan.cooling_times),
        plan.workers,
    )

    sample = partial(_sample_endpoint, plan)
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers, initializer=reset_worker_metrics) as pool:
            endpoints = list(pool.map(sample, *zip(*tasks)))
    else:
        endpoints = [sample(value, cooling_time) for value, cooling_time in tasks]

    per_value = len(plan.cooling_times)
    grouped = [endpoints[i * per_value : (i + 1) * per_value] for i in range(len(plan.values))]

    rows = {}
    succeeded = []
    for index, (value, value_endpoints) in enumerate(zip(plan.values, grouped)):
        errors = [endpoint.error for endpoint in value_endpoints if endpoint.error]
        if errors:
            logger.warning("%s=%s flagged: %s", plan.swept_param, value, errors[0])
            rows[index] = SweepRow(value, RowStatus.TRAJECTORY_FAILED, (None,) * plan.n_modes, None, errors[0])
        else:
            succeeded.append((index, _traces_for(plan, initial, value_endpoints)))

    fits = {index: [] for index, _ in succeeded}
    messages = {index: [] for index, _ in succeeded}
    for mode in range(plan.n_modes):
        outcomes = _fit_mode([traces[mode] for _, traces in succeeded], plan.fit_observable) if succeeded else []
        for (index, _), (fit, message) in zip(succeeded, outcomes):
            fits[index].append(fit)
            if message:
                messages[index].append(f"mode {mode}: {message}")

    for index, traces in succeeded:
        value = plan.values[index]
        if messages[index]:
            message = "; ".join(messages[index])
            logger.warning("%s=%s flagged: %s", plan.swept_param, value, message)
            rows[index] = SweepRow(value, RowStatus.FIT_FAILED, tuple(fits[index]), traces, message)
        else:
            logger.info(
                "%s=%s T_0=%s us",
                plan.swept_param,
                value,
                ", ".join(f"{fit.t0 / US:.4g}" for fit in fits[index]),
            )
            rows[index] = SweepRow(value, RowStatus.OK, tuple(fits[index]), traces)

    ordered = tuple(rows[index] for index in range(len(plan.values)))
    for row in ordered:
        statsd_client.count_row(row.status.value)
    return SweepResult(plan.scenario, plan.swept_param, plan.n_modes, ordered)


def _score(row, objective):
    if objective is Objective.MIN_T0:
        return row.fits[0].t0
    return max(fit.t0 for fit in row.fits)


def final_mean_occupations(row):
    return tuple(float(trace.nbar[-1]) for trace in row.traces)


def find_optimum(result, objective=None, cold_nbar=DEFAULT_COLD_NBAR):
    """
    Best successful row. ``smallest_cold`` picks the first swept value whose
    every mode ends at or below ``cold_nbar``, the time constants decide otherwise.
    """
    if objective is None:
        objective = Objective.MIN_MAX_MODE_T0 if result.n_modes > 1 else Objective.MIN_T0
    objective = Objective(objective)
    candidates = result.successful_rows()
    if not candidates:
        raise NoSuccessfulFitsError(f"Every point of the {result.swept_param} sweep failed")
    if objective is Objective.SMALLEST_COLD:
        cold = [row for row in candidates if max(final_mean_occupations(row)) <= cold_nbar]
        if not cold:
            raise NoSuccessfulFitsError(f"No {result.swept_param} value cools every mode to nbar <= {cold_nbar:g}")
        return min(cold, key=lambda row: row.value)
    return min(candidates, key=lambda row: _score(row, objective))


def write_sweep_csv(result, path):
    label = DISPLAY_UNITS[result.swept_param][0]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["swept_param", "value", "mode", "nbar_i", "nbar_f", "T0_us", "residual", "status"])
        for row in result.rows:
            _, value = display_value(result.swept_param, row.value)
            for mode, fit in enumerate(row.fits):
                numbers = (None,) * 4 if fit is None else (fit.nbar_i, fit.nbar_f, fit.t0 / US, fit.residual_norm)
                writer.writerow(
                    [label, _format_number(value), mode, *(_format_number(x) for x in numbers), row.status.value]
                )


def write_trace_csv(trace, path, emulate_detection=False):
    """One row per sample, with a ``mode`` column once the trace holds more than one mode."""
    signal_header = ["signal"] if emulate_detection else []
    multi_mode = trace.n_modes > 1
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t_us", *(["mode"] if multi_mode else []), "P0", "nbar", *signal_header])
        for sample, t in enumerate(trace.times):
            for mode in range(trace.n_modes):
                p0 = trace.ground_population[sample, mode]
                signal = [_format_number(apply_signal_correction(p0))] if emulate_detection else []
                writer.writerow(
                    [
                        _format_number(t / US),
                        *([mode] if multi_mode else []),
                        _format_number(p0),
                        _format_number(trace.mean_occupation[sample, mode]),
                        *signal,
                    ]
                )
