import logging
from pathlib import Path

import yaml

from sbc_forge import HIGH_ORDER_N_MAX, MS, US
from sbc_forge.analysis import FitObservable, Transition
from sbc_forge.bloch import INTEGRATORS, PhysicsParams
from sbc_forge.fock import ThermalSpec, TrapMode, calibrate_omega0
from sbc_forge.sequencer import Probe, PulseSchedule, Repump
from sbc_forge.sweep import (
    DEFAULT_COLD_NBAR,
    DISPLAY_UNITS,
    Objective,
    Scenario,
    SweepPlan,
    build_schedule,
    cooling_grid,
    minimum_cooling_time,
)

logger = logging.getLogger(__name__)

SCENARIOS = tuple(scenario.value for scenario in Scenario)
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
TRANSITIONS = ("carrier", "rsb", "bsb")
SPECTRUM_STATES = ("cooled", "initial")

# Config keys of swept parameters and the plan parameter each one drives.
SWEEP_KEYS = {label: param for param, (label, _) in DISPLAY_UNITS.items()}


class ConfigError(ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


def _number(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    return float(value)


def positive(key, value):
    value = _number(key, value)
    if value <= 0:
        raise ConfigError(key, f"must be positive, got {value:g}")
    return value


def non_negative(key, value):
    value = _number(key, value)
    if value < 0:
        raise ConfigError(key, f"must be >= 0, got {value:g}")
    return value


def fraction(key, value):
    value = _number(key, value)
    if not 0 <= value <= 1:
        raise ConfigError(key, f"must be in [0, 1], got {value:g}")
    return value


def optional(converter):
    def convert(key, value):
        return None if value is None else converter(key, value)

    return convert


def integer(minimum):
    def convert(key, value):
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            raise ConfigError(key, f"expected an integer >= {minimum}, got {value!r}")
        return value

    return convert


def flag(key, value):
    if not isinstance(value, bool):
        raise ConfigError(key, f"expected true or false, got {value!r}")
    return value


def text(key, value):
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def choice(*options):
    def convert(key, value):
        if value not in options:
            raise ConfigError(key, f"expected one of {', '.join(options)}, got {value!r}")
        return value

    return convert


def number_list(key, value):
    if not isinstance(value, list) or not value:
        raise ConfigError(key, f"expected a non-empty list of numbers, got {value!r}")
    return [_number(key, item) for item in value]


def choice_list(*options):
    def convert(key, value):
        items = value.split(",") if isinstance(value, str) else value
        if not isinstance(items, list) or not items:
            raise ConfigError(key, f"expected a list, got {value!r}")
        return [choice(*options)(key, str(item).strip()) for item in items]

    return convert


def sweep_key(key, value):
    return choice(*SWEEP_KEYS)(key, value)


SCHEMA = {
    "scenario": (choice(*SCENARIOS), "single_ion"),
    "output_dir": (text, "."),
    # addressed mode, the in-phase mode for two_mode
    "trap_freq_mhz": (positive, 2.21),
    "eta": (positive, 0.30),
    "n_max": (integer(1), 80),
    "pi_time_us": (positive, 16.0),
    "nbar_i": (optional(non_negative), 10.0),
    "temperature_mk": (optional(positive), None),
    # out-of-phase mode
    "op_trap_freq_mhz": (positive, 3.85),
    "op_eta": (positive, 0.16),
    "op_n_max": (integer(1), 40),
    "op_pi_time_us": (positive, 26.5),
    "op_nbar_i": (optional(non_negative), None),
    "op_temperature_mk": (optional(positive), 1.0),
    # physics
    "gamma_eff_per_ms": (non_negative, 42.0),
    "gamma_background_per_ms": (non_negative, 0.0),
    "xi": (optional(fraction), None),
    "eta_tilde": (non_negative, 0.134),
    "pulse_area_reduction_us": (non_negative, 1.0),
    "repump_us": (non_negative, 3.0),
    "repump_gap_us": (non_negative, 5.0),
    "quench": (flag, True),
    "integrator": (choice(*INTEGRATORS), "rk"),
    "max_tail_mass": (fraction, 0.01),
    # schedules
    "cooling_time_us": (non_negative, 500.0),
    "alpha": (fraction, 0.5),
    "t_r1_us": (positive, 10.0),
    "t_r2_us": (positive, 10.0),
    "alpha_prime": (fraction, 0.5),
    "t_ip_us": (positive, 15.0),
    "t_op_us": (positive, 20.0),
    "beta_max": (integer(1), 8),
    "t_pulse_us": (positive, 10.0),
    # sweeps
    "sweep_param": (sweep_key, "t_r1_us"),
    "sweep_values": (number_list, [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 15.0, 20.0, 25.0, 30.0]),
    "cooling_grid_points": (integer(1), 12),
    "cooling_grid_min_us": (non_negative, 0.0),
    "objective": (optional(choice(*(objective.value for objective in Objective))), None),
    "cold_nbar": (non_negative, DEFAULT_COLD_NBAR),
    "fit_observable": (choice(*(observable.value for observable in FitObservable)), "ground_population"),
    "workers": (integer(1), 1),
    "write_traces": (flag, False),
    "emulate_detection": (flag, False),
    # strategy map
    "strategy_n_max": (integer(1), 120),
    # spectrum
    "spectrum_state": (choice(*SPECTRUM_STATES), "cooled"),
    "spectrum_transitions": (choice_list(*TRANSITIONS), ["rsb", "carrier", "bsb"]),
    "spectrum_order": (integer(1), 1),
    "spectrum_mode": (integer(0), 0),
    "probe_time_us": (optional(positive), None),
    "detuning_span_mhz": (positive, 0.1),
    "detuning_points": (integer(2), 201),
    # logging and metrics
    "log_level": (choice(*LOG_LEVELS), "INFO"),
    "log_format": (choice("text", "json"), "text"),
    "log_path": (optional(text), None),
    "statsd_enabled": (flag, False),
    "statsd_host": (text, "localhost"),
    "statsd_port": (integer(1), 8125),
    "statsd_prefix": (text, "sbc-forge"),
}

SCENARIO_DEFAULTS = {
    "single_ion": {},
    "two_mode": {
        "eta": 0.21,
        "n_max": 60,
        "pi_time_us": 21.0,
        "nbar_i": None,
        "temperature_mk": 1.0,
        "cooling_time_us": 2400.0,
        "sweep_param": "alpha_prime",
        "sweep_values": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    },
    "high_order": {
        "trap_freq_mhz": 1.0,
        "eta": 0.45,
        "n_max": HIGH_ORDER_N_MAX,
        "pi_time_us": 11.3,
        "nbar_i": None,
        "temperature_mk": 1.0,
        "cooling_time_us": 1600.0,
        "sweep_param": "beta_max",
        "sweep_values": [4, 5, 6, 7, 8, 9, 10],
        "objective": "smallest_cold",
    },
}


class RunConfig:
    """
    Flat, validated view of a run's settings. Defaults depend on the
    scenario; file values override them and ``--set`` overrides win last.
    """

    def __init__(self, values=None):
        values = dict(values or {})
        unknown = sorted(set(values) - set(SCHEMA))
        if unknown:
            raise ConfigError(unknown[0], "unknown config key")

        scenario = SCHEMA["scenario"][0]("scenario", values.get("scenario", "single_ion"))
        merged = {key: default for key, (_, default) in SCHEMA.items()}
        merged.update(SCENARIO_DEFAULTS[scenario])
        merged.update(values)

        for key, value in merged.items():
            converter, _ = SCHEMA[key]
            setattr(self, key, converter(key, value))

        self._validate()

    def _validate(self):
        if self.nbar_i is None and self.temperature_mk is None:
            raise ConfigError("nbar_i", "set nbar_i or temperature_mk for the initial state")
        if self.is_two_mode and self.op_nbar_i is None and self.op_temperature_mk is None:
            raise ConfigError("op_nbar_i", "set op_nbar_i or op_temperature_mk for the initial state")
        parameter = SWEEP_KEYS[self.sweep_param]
        if parameter not in self.schedule_parameters() and parameter != "gamma_eff":
            raise ConfigError("sweep_param", f"{self.sweep_param} is not swept in a {self.scenario} run")

    @classmethod
    def load(cls, path=None, overrides=()):
        values = {}
        if path is not None:
            try:
                loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
            except (OSError, yaml.YAMLError) as e:
                raise ConfigError("config", f"cannot read {path}: {e}") from e
            if loaded is not None and not isinstance(loaded, dict):
                raise ConfigError("config", f"{path} must hold a key: value mapping")
            values.update(loaded or {})
        for override in overrides:
            key, separator, raw = override.partition("=")
            if not separator or not key.strip():
                raise ConfigError(override, "overrides must look like key=value")
            try:
                values[key.strip()] = yaml.safe_load(raw)
            except yaml.YAMLError as e:
                raise ConfigError(key.strip(), f"cannot parse {raw!r}") from e
        for key, value in values.items():
            if isinstance(value, dict):
                raise ConfigError(key, "nested mappings are not supported")
        logger.debug("Loaded config from %s with %s overrides", path, len(overrides))
        return cls(values)

    @property
    def is_two_mode(self):
        return self.scenario == Scenario.TWO_MODE.value

    def modes(self):
        name = "ip" if self.is_two_mode else "axial"
        addressed = TrapMode.from_mhz(self.trap_freq_mhz, self.eta, self.n_max, name=name)
        if not self.is_two_mode:
            return (addressed,)
        return (addressed, TrapMode.from_mhz(self.op_trap_freq_mhz, self.op_eta, self.op_n_max, name="op"))

    def initial_specs(self):
        modes = self.modes()
        specs = [self._thermal_spec(self.nbar_i, self.temperature_mk, modes[0])]
        if self.is_two_mode:
            specs.append(self._thermal_spec(self.op_nbar_i, self.op_temperature_mk, modes[1]))
        return tuple(specs)

    @staticmethod
    def _thermal_spec(nbar, temperature_mk, mode):
        if nbar is not None:
            return ThermalSpec(nbar=nbar)
        return ThermalSpec(temperature=temperature_mk * 1e-3, mode=mode)

    def omega0(self):
        omega0 = calibrate_omega0(self.pi_time_us * US, self.eta)
        if not self.is_two_mode:
            return omega0
        return (omega0, calibrate_omega0(self.op_pi_time_us * US, self.op_eta))

    def physics_params(self):
        xi = self.xi if self.xi is not None else PhysicsParams.xi_from_eta_tilde(self.eta_tilde)
        try:
            return PhysicsParams(
                omega0=self.omega0(),
                gamma_eff=self.gamma_eff_per_ms / MS,
                gamma_background=self.gamma_background_per_ms / MS,
                xi=xi,
                eta_tilde=self.eta_tilde,
                pulse_area_reduction=self.pulse_area_reduction_us * US,
                repump_pulse=self.repump_us * US,
                repump_gap=self.repump_gap_us * US,
                integrator=self.integrator,
            )
        except ValueError as e:
            raise ConfigError("physics", str(e)) from e

    def schedule_parameters(self):
        if self.scenario == Scenario.SINGLE_ION.value:
            return {"alpha": self.alpha, "t_r2": self.t_r2_us * US, "t_r1": self.t_r1_us * US}
        if self.is_two_mode:
            return {"alpha_prime": self.alpha_prime, "t_ip": self.t_ip_us * US, "t_op": self.t_op_us * US}
        return {"beta_max": self.beta_max, "t_pulse": self.t_pulse_us * US}

    def schedule(self, cooling_time=None, probe=False):
        cooling_time = self.cooling_time_us * US if cooling_time is None else cooling_time
        physics = self.physics_params()
        schedule = build_schedule(
            self.scenario,
            self.schedule_parameters(),
            cooling_time,
            quench_on=self.quench,
            repump=Repump(physics.repump_pulse, physics.repump_gap),
        )
        if probe:
            schedule = PulseSchedule([*schedule, Probe()])
        return schedule

    def swept_values(self):
        parameter = SWEEP_KEYS[self.sweep_param]
        _, scale = DISPLAY_UNITS[parameter]
        return tuple(value / scale for value in self.sweep_values)

    def sweep_plan(self):
        parameter = SWEEP_KEYS[self.sweep_param]
        values = self.swept_values()
        if self.cooling_time_us <= 0:
            raise ConfigError("cooling_time_us", "a sweep needs a positive cooling time")
        minimum = max(
            self.cooling_grid_min_us * US,
            minimum_cooling_time(self.scenario, self.schedule_parameters(), parameter, values),
        )
        try:
            return SweepPlan(
                scenario=Scenario(self.scenario),
                physics=self.physics_params(),
                modes=self.modes(),
                initial=self.initial_specs(),
                schedule_parameters=self.schedule_parameters(),
                swept_param=parameter,
                values=values,
                cooling_times=cooling_grid(self.cooling_time_us * US, self.cooling_grid_points, minimum),
                quench_on=self.quench,
                workers=self.workers,
                max_tail_mass=self.max_tail_mass,
                fit_observable=self.fit_observable,
            )
        except ValueError as e:
            raise ConfigError("sweep_values", str(e)) from e

    def transitions(self):
        return [
            Transition.carrier() if kind == "carrier" else Transition(kind, self.spectrum_order)
            for kind in self.spectrum_transitions
        ]

    def __repr__(self):
        return f"{self.__class__.__name__}(scenario={self.scenario!r})"

