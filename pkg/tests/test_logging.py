import json
import logging as builtin_logging
import logging.handlers as builtin_logging_handlers

import pytest
from freezegun import freeze_time

from sbc_forge import logging


def make_record(msg="message to log"):
    return builtin_logging.LogRecord(
        name="log thing", level="info", pathname="path", lineno=123, msg=msg, exc_info=None, args=None
    )


def test_get_handlers_sets_up_text_logging_without_log_path(tmpdir, config_stub):
    handlers = logging.get_handlers(config_stub(log_level="ERROR"), extra_filters=[])

    assert len(handlers) == 1
    assert type(handlers[0]) == builtin_logging.StreamHandler
    assert type(handlers[0].formatter) == logging.Formatter
    assert not tmpdir.listdir()


def test_get_handlers_sets_up_file_logging_with_log_path(tmpdir, config_stub):
    class TestFilter(builtin_logging.Filter):
        def filter(self, record):
            record.arbitrary_info = "some-extra-info"
            return record

    config = config_stub(log_path=str(tmpdir / "foo"), log_level="ERROR", log_format="json")

    handlers = logging.get_handlers(config, extra_filters=[TestFilter()])

    assert len(handlers) == 2
    assert type(handlers[0]) == builtin_logging.StreamHandler
    assert type(handlers[0].formatter) == logging.JSONFormatter
    assert len(handlers[0].filters) == 4

    assert type(handlers[1]) == builtin_logging_handlers.WatchedFileHandler
    assert type(handlers[1].formatter) == logging.JSONFormatter
    assert len(handlers[1].filters) == 4

    dir_contents = tmpdir.listdir()
    assert len(dir_contents) == 1
    assert dir_contents[0].basename == "foo.json"


@pytest.mark.parametrize(
    "frozen_time,logged_time",
    [
        ("2023-10-31 00:00:01.12345678", "2023-10-31T00:00:01.123456"),
        ("2020-01-15 01:01:02.999999999", "2020-01-15T01:01:02.999999"),
        ("2020-11-18 12:12:12.000000", "2020-11-18T12:12:12.000000"),
    ],
)
def test_log_timeformat_fractional_seconds(frozen_time, logged_time, config_stub):
    with freeze_time(frozen_time):
        handlers = logging.get_handlers(config_stub(log_format="json"), extra_filters=[])

        record = make_record()
        assert json.loads(handlers[0].format(record))["time"] == logged_time


def test_json_formatter_renames_context_fields(config_stub):
    logging.current_run_id.set("abc123")
    (handler,) = logging.get_handlers(config_stub(log_format="json", scenario="two_mode"), extra_filters=[])
    record = make_record()

    assert handler.filter(record)
    logged = json.loads(handler.format(record))

    assert logged["message"] == "message to log"
    assert logged["application"] == "sbc-forge"
    assert logged["runId"] == "abc123"
    assert logged["scenario"] == "two_mode"
    assert logged["logType"] == "simulation"
    assert "asctime" not in logged


def test_text_formatter_includes_context(config_stub):
    (handler,) = logging.get_handlers(config_stub(scenario="high_order"), extra_filters=[])
    record = make_record()

    handler.filter(record)

    assert '"message to log"' in handler.format(record)
    assert "high_order" in handler.format(record)


def test_run_id_filter_defaults():
    record = make_record()
    assert logging.RunIdFilter().filter(record).run_id == logging.current_run_id.get()


def test_init_logging_replaces_package_handlers(tmpdir, config_stub):
    config = config_stub(log_path=str(tmpdir / "logs" / "run"), log_level="DEBUG")
    package_logger = builtin_logging.getLogger("sbc_forge")

    logging.init_logging(config)
    logging.init_logging(config)

    assert len(package_logger.handlers) == 2
    assert package_logger.level == builtin_logging.DEBUG
    assert (tmpdir / "logs" / "run.json").exists()

    for handler in package_logger.handlers[:]:
        package_logger.removeHandler(handler)
        handler.close()
