import math

import pytest

from sbc_forge import MS, US
from sbc_forge.analysis import FitObservable, Transition
from sbc_forge.config import ConfigError, RunConfig
from sbc_forge.sequencer import Probe
from sbc_forge.sweep import Scenario


def test_defaults_describe_single_ion_cooling():
    config = RunConfig()
    (mode,) = config.modes()

    assert config.scenario == "single_ion"
    assert mode.eta == 0.3
    assert mode.frequency_mhz == pytest.approx(2.21)
    assert config.initial_specs()[0].nbar == 10
    assert config.schedule_parameters() == {"alpha": 0.5, "t_r2": 10 * US, "t_r1": 10 * US}


def test_physics_params_from_config():
    physics = RunConfig({"gamma_eff_per_ms": 20, "gamma_background_per_ms": 0.5}).physics_params()

    assert physics.gamma_eff == pytest.approx(20 / MS)
    assert physics.gamma_background == pytest.approx(0.5 / MS)
    assert physics.xi == pytest.approx(0.05)
    assert physics.pulse_area_reduction == pytest.approx(1 * US)
    assert physics.omega0 * 0.3 * math.exp(-0.045) * 16 * US == pytest.approx(math.pi)


def test_explicit_xi_wins_over_emission_factor():
    assert RunConfig({"xi": 0.1, "eta_tilde": 0.5}).physics_params().xi == 0.1


def test_two_mode_defaults():
    config = RunConfig({"scenario": "two_mode"})
    ip, op = config.modes()

    assert (ip.name, op.name) == ("ip", "op")
    assert (ip.eta, op.eta) == (0.21, 0.16)
    assert config.sweep_param == "alpha_prime"
    assert config.initial_specs()[0].resolve_nbar() == pytest.approx(8.94, abs=0.01)
    assert config.initial_specs()[1].resolve_nbar() == pytest.approx(4.93, abs=0.01)
    assert len(config.omega0()) == 2


def test_high_order_defaults():
    config = RunConfig({"scenario": "high_order"})
    (mode,) = config.modes()

    assert mode.eta == 0.45
    assert mode.n_max == 180
    assert config.initial_specs()[0].resolve_nbar() == pytest.approx(20.34, abs=0.01)
    assert config.schedule_parameters() == {"beta_max": 8, "t_pulse": 10 * US}
    assert config.cooling_time_us == 1600
    assert config.objective == "smallest_cold"
    assert config.cold_nbar == 0.01


def test_values_override_scenario_defaults():
    config = RunConfig({"scenario": "two_mode", "eta": 0.25, "nbar_i": 5})
    assert config.modes()[0].eta == 0.25
    assert config.initial_specs()[0].nbar == 5


@pytest.mark.parametrize(
    "values, key",
    [
        ({"colour": "blue"}, "colour"),
        ({"scenario": "three_mode"}, "scenario"),
        ({"eta": -0.1}, "eta"),
        ({"eta": "big"}, "eta"),
        ({"alpha": 1.5}, "alpha"),
        ({"n_max": 2.5}, "n_max"),
        ({"quench": "yes"}, "quench"),
        ({"sweep_values": []}, "sweep_values"),
        ({"sweep_param": "t_ip_us"}, "sweep_param"),
        ({"nbar_i": None}, "nbar_i"),
        ({"spectrum_transitions": "carrier,raman"}, "spectrum_transitions"),
        ({"log_level": "LOUD"}, "log_level"),
        ({"fit_observable": "signal"}, "fit_observable"),
        ({"objective": "fastest"}, "objective"),
        ({"cold_nbar": -0.1}, "cold_nbar"),
    ],
)
def test_invalid_values_are_rejected(values, key):
    with pytest.raises(ConfigError) as e:
        RunConfig(values)
    assert e.value.key == key


def test_load_from_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("scenario: high_order\nbeta_max: 6\nt_pulse_us: 12\n")

    config = RunConfig.load(path)

    assert config.schedule_parameters() == {"beta_max": 6, "t_pulse": pytest.approx(12 * US)}


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("alpha: 0.2\nquench: true\n")

    config = RunConfig.load(path, ["alpha=0.7", "quench=false", "sweep_values=[5, 10]"])

    assert config.alpha == 0.7
    assert config.quench is False
    assert config.swept_values() == (pytest.approx(5 * US), pytest.approx(10 * US))


@pytest.mark.parametrize(
    "content, key",
    [("- alpha\n- beta\n", "config"), ("alpha: [\n", "config"), ("physics:\n  eta: 0.3\n", "physics")],
)
def test_load_rejects_bad_files(tmp_path, content, key):
    path = tmp_path / "run.yaml"
    path.write_text(content)
    with pytest.raises(ConfigError) as e:
        RunConfig.load(path)
    assert e.value.key == key


def test_load_rejects_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "missing.yaml")


def test_load_rejects_malformed_override():
    with pytest.raises(ConfigError, match="key=value"):
        RunConfig.load(None, ["alpha"])


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("")
    assert RunConfig.load(path).scenario == "single_ion"


def test_schedule_from_config():
    config = RunConfig({"cooling_time_us": 500, "repump_gap_us": 4})
    schedule = config.schedule()

    assert schedule.repump_count == 50
    assert schedule.total_time == pytest.approx(700 * US)
    assert config.schedule(probe=True)[-1] == Probe()


def test_quench_off_reaches_schedule():
    schedule = RunConfig({"quench": False}).schedule(100 * US)
    assert not any(pulse.quench_on for pulse in schedule.rsb_pulses())


def test_sweep_plan_from_config():
    config = RunConfig({"sweep_values": [8, 10, 12], "cooling_time_us": 300, "cooling_grid_points": 5})
    plan = config.sweep_plan()

    assert plan.scenario is Scenario.SINGLE_ION
    assert plan.swept_param == "t_r1"
    assert plan.values == (pytest.approx(8 * US), pytest.approx(10 * US), pytest.approx(12 * US))
    assert len(plan.cooling_times) == 5
    assert plan.cooling_times[0] == pytest.approx(12 * US)
    assert plan.cooling_times[-1] == pytest.approx(300 * US)


@pytest.mark.parametrize("observable", ["ground_population", "mean_occupation"])
def test_sweep_plan_carries_fit_observable(observable):
    plan = RunConfig({"fit_observable": observable, "sweep_values": [8, 10]}).sweep_plan()
    assert plan.fit_observable is FitObservable(observable)


def test_sweep_over_decay_rate():
    plan = RunConfig({"sweep_param": "gamma_eff_per_ms", "sweep_values": [10, 40]}).sweep_plan()
    assert plan.swept_param == "gamma_eff"
    assert plan.values == (pytest.approx(10 / MS), pytest.approx(40 / MS))


def test_sweep_plan_needs_cooling_time():
    with pytest.raises(ConfigError, match="positive cooling time"):
        RunConfig({"cooling_time_us": 0}).sweep_plan()


def test_sweep_plan_rejects_unordered_values():
    with pytest.raises(ConfigError, match="monotone"):
        RunConfig({"sweep_values": [10, 8, 12]}).sweep_plan()


def test_transitions_from_config():
    config = RunConfig({"spectrum_transitions": "rsb, bsb", "spectrum_order": 2})
    assert config.transitions() == [Transition.rsb(2), Transition.bsb(2)]
