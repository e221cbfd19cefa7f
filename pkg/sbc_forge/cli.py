import csv
import logging
import uuid
from pathlib import Path

import click
import numpy as np

from sbc_forge import MHZ, US
from sbc_forge.analysis import (
    CoolingTrace,
    FitError,
    InvalidSidebandDataError,
    extract_nbar,
    sideband_efficiency_map,
    simulate_sideband_spectrum,
    thermal_occupation,
)
from sbc_forge.bloch import IntegrationError
from sbc_forge.clients.statsd.statsd_client import statsd_client
from sbc_forge.config import ConfigError, RunConfig
from sbc_forge.fock import TruncationError, rabi_table
from sbc_forge.logging import current_run_id, init_logging
from sbc_forge.sequencer import ScheduleError, format_schedule
from sbc_forge.sweep import (
    NoSuccessfulFitsError,
    display_value,
    find_optimum,
    initial_state,
    play_schedule,
    run_sweep,
    write_sweep_csv,
    write_trace_csv,
)
from sbc_forge.version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PHYSICS_ERROR = 2

PHYSICS_ERRORS = (
    IntegrationError,
    TruncationError,
    ScheduleError,
    FitError,
    NoSuccessfulFitsError,
    InvalidSidebandDataError,
)


def config_options(func):
    func = click.option("--output-dir", type=click.Path(file_okay=False), help="Overrides output_dir.")(func)
    func = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key.")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Flat YAML config file.")(
        func
    )
    return func


def _prepare(config_path, overrides, output_dir):
    config = RunConfig.load(config_path, overrides)
    if output_dir:
        config.output_dir = output_dir
    current_run_id.set(uuid.uuid4().hex[:12])
    init_logging(config)
    statsd_client.configure(config)

    output = Path(config.output_dir)
    output.mkdir(parents=True, exist_ok=True)
    return config, output


def _echo_fields(fields):
    for key, value in fields:
        click.echo(f"{key}: {value:.6g}" if isinstance(value, float) else f"{key}: {value}")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _mode_suffix(config, mode):
    return f"_{mode.name}" if config.is_two_mode else ""


def _simulate(config):
    modes = config.modes()
    schedule = config.schedule()
    initial = initial_state(modes, config.initial_specs(), config.max_tail_mass)
    logger.info("Simulating %s pulses over T_c=%g us", len(schedule.rsb_pulses()), schedule.cooling_time / US)
    state, trace = play_schedule(schedule, initial, config.physics_params(), modes)
    return schedule, state, trace, modes


@click.group()
@click.version_option(__version__, prog_name="sbc-forge")
def cli():
    """Resolved-sideband cooling simulations for trapped ions."""


@cli.command()
@config_options
def simulate(config_path, overrides, output_dir):
    """Run one cooling trajectory and write trace.csv."""
    config, output = _prepare(config_path, overrides, output_dir)
    schedule, _, trace, modes = _simulate(config)

    (output / "schedule.txt").write_text(format_schedule(schedule), encoding="utf-8")
    write_trace_csv(trace, output / "trace.csv", emulate_detection=config.emulate_detection)

    fields = [
        ("scenario", config.scenario),
        ("cooling_time_us", schedule.cooling_time / US),
        ("total_time_us", schedule.total_time / US),
        ("repump_count", schedule.repump_count),
    ]
    p0, nbar = trace.final_samples()
    for index, mode in enumerate(modes):
        suffix = _mode_suffix(config, mode)
        fields += [
            (f"final_nbar{suffix}", nbar[index]),
            (f"final_nbar_thermal{suffix}", float(thermal_occupation(p0[index]))),
            (f"final_p0{suffix}", p0[index]),
        ]
    _echo_fields(fields)


def _combined_trace(traces):
    return CoolingTrace(
        traces[0].times,
        np.column_stack([trace.p0 for trace in traces]),
        np.column_stack([trace.nbar for trace in traces]),
    )


@cli.command()
@config_options
def sweep(config_path, overrides, output_dir):
    """Sweep one parameter, fit T_0 per point and report the optimum."""
    config, output = _prepare(config_path, overrides, output_dir)
    plan = config.sweep_plan()
    result = run_sweep(plan)
    write_sweep_csv(result, output / "sweep.csv")

    if config.write_traces:
        for row in result.rows:
            if row.traces is not None:
                _, value = display_value(plan.swept_param, row.value)
                write_trace_csv(
                    _combined_trace(row.traces),
                    output / f"trace_{value:g}.csv",
                    emulate_detection=config.emulate_detection,
                )

    flagged = len(result.rows) - len(result.successful_rows())
    _echo_fields([("points", len(result.rows)), ("flagged", flagged)])

    optimum = find_optimum(result, config.objective, config.cold_nbar)
    label, value = display_value(plan.swept_param, optimum.value)
    (output / "schedule.txt").write_text(
        format_schedule(plan.schedule_for(optimum.value, plan.cooling_times[-1])), encoding="utf-8"
    )
    click.echo(f"optimum: {label}={value:g}")
    for index, (mode, fit) in enumerate(zip(plan.modes, optimum.fits)):
        suffix = _mode_suffix(config, mode)
        statsd_client.gauge_fit(index, fit)
        _echo_fields([(f"T0_us{suffix}", fit.t0 / US), (f"nbar_f{suffix}", fit.nbar_f)])


@cli.command("strategy-map")
@config_options
@click.option("--eta", type=float, help="Overrides eta.")
@click.option("--n-max", type=int, help="Overrides strategy_n_max.")
def strategy_map(config_path, overrides, output_dir, eta, n_max):
    """Write the most efficient sideband order per Fock level."""
    config, output = _prepare(config_path, overrides, output_dir)
    eta = config.eta if eta is None else eta
    n_max = config.strategy_n_max if n_max is None else n_max
    if eta <= 0 or n_max < 1:
        raise ConfigError("strategy-map", f"need eta > 0 and n_max >= 1, got eta={eta} n_max={n_max}")

    strategy = sideband_efficiency_map(eta, n_max)
    _write_csv(output / "strategy_map.csv", ["n", "best_beta"], strategy.rows())

    for beta, first, last in strategy.bands():
        click.echo(f"beta={beta}: n={first}-{last}")
    click.echo(f"max_order: {strategy.max_order()}")


@cli.command()
@config_options
def spectrum(config_path, overrides, output_dir):
    """Scan sideband and carrier transitions of the initial or cooled state."""
    config, output = _prepare(config_path, overrides, output_dir)
    modes = config.modes()
    mode_index = config.spectrum_mode
    if mode_index >= len(modes):
        raise ConfigError("spectrum_mode", f"{config.scenario} has {len(modes)} modes")

    if config.spectrum_state == "cooled":
        schedule, state, _, _ = _simulate(config)
        (output / "schedule.txt").write_text(format_schedule(schedule), encoding="utf-8")
    else:
        state = initial_state(modes, config.initial_specs(), config.max_tail_mass)

    physics = config.physics_params()
    omega0 = physics.carrier_rabi(mode_index)
    default_probe = config.op_pi_time_us if mode_index else config.pi_time_us
    probe_time = (config.probe_time_us or default_probe) * US
    detunings_mhz = np.linspace(-config.detuning_span_mhz, config.detuning_span_mhz, config.detuning_points)
    tables = [rabi_table(mode.eta, mode.n_max) for mode in modes]

    peaks = {}
    rows = []
    for transition in config.transitions():
        excitation = simulate_sideband_spectrum(
            state, probe_time, detunings_mhz * MHZ, transition, omega0, tables, mode_index
        )
        peaks[transition.kind] = float(excitation.max())
        rows += [(transition, f"{detuning:.10g}", f"{p:.10g}") for detuning, p in zip(detunings_mhz, excitation)]
    _write_csv(output / "spectrum.csv", ["transition", "detuning_mhz", "p_exc"], rows)

    _echo_fields([(f"peak_{kind}", peak) for kind, peak in peaks.items()])
    if "rsb" in peaks and "bsb" in peaks:
        try:
            click.echo(f"nbar: {extract_nbar(peaks['rsb'], peaks['bsb']):.6g}")
        except InvalidSidebandDataError as e:
            logger.warning("Cannot extract nbar from the scan: %s", e)
            click.echo("nbar: n/a")


def main(argv=None):
    logging.getLogger().addHandler(logging.NullHandler())
    try:
        return cli.main(args=argv, prog_name="sbc-forge", standalone_mode=False) or EXIT_OK
    except click.ClickException as e:
        e.show()
        return EXIT_CONFIG_ERROR
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_CONFIG_ERROR
    except ConfigError as e:
        logger.error("Config error: %s", e)
        click.echo(f"config error: {e}", err=True)
        return EXIT_CONFIG_ERROR
    except PHYSICS_ERRORS as e:
        logger.error("Run failed: %s", e)
        click.echo(f"error: {e}", err=True)
        return EXIT_PHYSICS_ERROR
