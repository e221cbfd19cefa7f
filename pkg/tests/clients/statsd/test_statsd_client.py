import logging
from unittest.mock import Mock

import pytest

from sbc_forge.analysis import CoolingFit
from sbc_forge.clients.statsd.statsd_client import SbcStatsClient, StatsdClient


@pytest.fixture
def client(config_stub, mocker):
    return build_client(config_stub(statsd_enabled=True, statsd_prefix="lab", scenario="two_mode"), mocker)


@pytest.fixture
def disabled_client(config_stub, mocker):
    return build_client(config_stub(statsd_enabled=False), mocker)


def build_client(config, mocker):
    client = StatsdClient()
    client.configure(config)
    if not config.statsd_enabled:
        # never built when disabled
        client.statsd_client = Mock()
    for method in ("incr", "gauge", "timing"):
        mocker.patch.object(client.statsd_client, method)
    return client


def test_namespace_includes_scenario(client):
    assert client.format_stat_name("sweep.run_sweep") == "lab.two_mode.sweep.run_sweep"


@pytest.mark.parametrize(
    "call, method",
    [
        (lambda c: c.incr("key"), "incr"),
        (lambda c: c.timing("key", 1), "timing"),
        (lambda c: c.gauge("key", 10), "gauge"),
        (lambda c: c.count_row("ok"), "incr"),
    ],
)
def test_disabled_client_sends_nothing(disabled_client, call, method):
    call(disabled_client)
    getattr(disabled_client.statsd_client, method).assert_not_called()


@pytest.mark.parametrize(
    "args, expected",
    [(("key",), ("lab.two_mode.key", 1, 1)), (("key", 10, 0.5), ("lab.two_mode.key", 10, 0.5))],
)
def test_incr(client, args, expected):
    client.incr(*args)
    client.statsd_client.incr.assert_called_with(*expected)


def test_timing_is_sent_in_milliseconds(client):
    client.timing("sweep.run_trajectory", 0.25, 99)
    client.statsd_client.timing.assert_called_with("lab.two_mode.sweep.run_trajectory", 250, 99)


def test_reset_stops_sending(client):
    inherited = client.statsd_client
    client.reset()
    client.incr("key")

    assert client.active is False
    assert client.statsd_client is None
    inherited.incr.assert_not_called()


def test_count_row_by_status(client):
    client.count_row("trajectory_failed")
    client.statsd_client.incr.assert_called_with("lab.two_mode.sweep.rows.trajectory_failed", 1, 1)


def test_gauge_fit_reports_time_constant_and_final_occupation(client):
    client.gauge_fit(1, CoolingFit(8.9, 0.03, 250e-6, 1e-3))

    assert [call.args for call in client.statsd_client.gauge.call_args_list] == [
        ("lab.two_mode.sweep.mode1.t0_us", pytest.approx(250)),
        ("lab.two_mode.sweep.mode1.nbar_f", 0.03),
    ]


def test_socket_errors_are_logged_not_raised(mocker, caplog):
    stats_client = SbcStatsClient("localhost", 8125)
    mocker.patch.object(stats_client, "_sock")
    mocker.patch.object(stats_client, "_cached_host", return_value="127.0.0.1")
    stats_client._sock.sendto = Mock(side_effect=OSError("network unreachable"))

    with caplog.at_level(logging.WARNING):
        stats_client._send("lab.single_ion.sweep.run_sweep:1|c")

    assert "Could not send metric to statsd: network unreachable" in caplog.messages


def test_nothing_sent_while_host_unresolved(mocker):
    stats_client = SbcStatsClient("localhost", 8125)
    sock = mocker.patch.object(stats_client, "_sock")
    cached_host = mocker.patch.object(stats_client, "_cached_host", return_value=None)

    stats_client._send("data")

    cached_host.assert_called_once_with()
    assert sock.called is False


def test_host_lookup_is_cached(mocker):
    stats_client = SbcStatsClient("statsd.cache.lab", 8125)

    resolve = mocker.patch.object(stats_client, "_resolve", return_value="10.0.0.7")
    assert stats_client._cached_host() == "10.0.0.7"
    assert stats_client._cached_host() == "10.0.0.7"
    resolve.assert_called_once_with("statsd.cache.lab")


def test_failed_lookup_is_cached_as_none(mocker, caplog):
    stats_client = SbcStatsClient("statsd.broken.lab", 8125)
    resolve = mocker.patch.object(stats_client, "_resolve", side_effect=OSError("no such host"))

    with caplog.at_level(logging.WARNING):
        assert stats_client._cached_host() is None
        assert stats_client._cached_host() is None

    resolve.assert_called_once_with("statsd.broken.lab")
    assert "Could not resolve statsd host statsd.broken.lab: no such host" in caplog.messages
