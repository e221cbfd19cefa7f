import logging
from unittest.mock import ANY, Mock

from sbc_forge.statsd_decorators import statsd


class AnyStringWith(str):
    def __eq__(self, other):
        return self in other


def test_should_call_statsd(mocker, caplog):
    client = mocker.patch("sbc_forge.statsd_decorators.statsd_client", Mock())

    @statsd(namespace="test")
    def test_function():
        return True

    with caplog.at_level(logging.DEBUG, logger="sbc_forge"):
        assert test_function()

    assert AnyStringWith("test call test_function took ") in caplog.messages
    client.incr.assert_called_once_with("test.test_function")
    client.timing.assert_called_once_with("test.test_function", ANY)


def test_decorated_function_keeps_its_name():
    @statsd(namespace="sweep")
    def run_something():
        pass

    assert run_something.__name__ == "run_something"
