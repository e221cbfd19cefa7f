import logging
import logging.handlers
import sys
from contextvars import ContextVar
from pathlib import Path
from typing import Sequence

from pythonjsonlogger.jsonlogger import JsonFormatter as BaseJSONFormatter

LOG_FORMAT = (
    "%(asctime)s %(app_name)s %(name)s %(levelname)s "
    '%(scenario)s %(run_id)s "%(message)s" [in %(pathname)s:%(lineno)d]'
)
TIME_FORMAT = "%Y-%m-%dT%H:%M:%S"
APP_NAME = "sbc-forge"
PACKAGE_LOGGER = "sbc_forge"

logger = logging.getLogger(__name__)

current_run_id: ContextVar[str] = ContextVar("current_run_id", default="no-run-id")


def init_logging(config, extra_filters: Sequence[logging.Filter] = tuple()):
    logging.getLogger().addHandler(logging.NullHandler())

    package_logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in package_logger.handlers[:]:
        package_logger.removeHandler(handler)
        handler.close()

    if config.log_path:
        ensure_log_path_exists(config.log_path)

    loglevel = logging.getLevelName(config.log_level)
    for handler in get_handlers(config, extra_filters=extra_filters):
        package_logger.addHandler(handler)
    package_logger.setLevel(loglevel)

    package_logger.debug("Logging configured")


def ensure_log_path_exists(path):
    """
    This function assumes you're passing a path to a file and attempts to create
    the path leading to that file.
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def get_handlers(config, extra_filters: Sequence[logging.Filter]):
    handlers = []
    standard_formatter = Formatter(LOG_FORMAT, TIME_FORMAT)
    json_formatter = JSONFormatter(LOG_FORMAT, TIME_FORMAT)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_formatter = json_formatter if config.log_format == "json" else standard_formatter
    handlers.append(configure_handler(stream_handler, config, stream_formatter, extra_filters=extra_filters))

    if config.log_path:
        file_handler = logging.handlers.WatchedFileHandler(filename=f"{config.log_path}.json")
        handlers.append(configure_handler(file_handler, config, json_formatter, extra_filters=extra_filters))

    return handlers


def configure_handler(handler, config, formatter, *, extra_filters: Sequence[logging.Filter]):
    handler.setLevel(logging.getLevelName(config.log_level))
    handler.setFormatter(formatter)
    handler.addFilter(AppNameFilter(APP_NAME))
    handler.addFilter(ScenarioFilter(config.scenario))
    handler.addFilter(RunIdFilter())

    for extra_filter in extra_filters:
        handler.addFilter(extra_filter)

    return handler


class AppNameFilter(logging.Filter):
    def __init__(self, app_name):
        self.app_name = app_name

    def filter(self, record):
        record.app_name = self.app_name

        return record


class ScenarioFilter(logging.Filter):
    def __init__(self, scenario):
        self.scenario = scenario

    def filter(self, record):
        record.scenario = self.scenario

        return record


class RunIdFilter(logging.Filter):
    @property
    def run_id(self):
        return current_run_id.get()

    def filter(self, record):
        record.run_id = self.run_id

        return record


class _MicrosecondAddingFormatterMixin:
    """
    Appends a `.` and then a 6-digit number of microseconds to whatever
    the superclass' `.formatTime(...)` returns.
    """

    # Supplying a `datefmt` makes the base `formatTime` skip the code that
    # would add milliseconds.

    def formatTime(self, record, *args, **kwargs):
        formatted = super().formatTime(record, *args, **kwargs)
        return f"{formatted}.{int((record.created - int(record.created)) * 1e6):06}"


class Formatter(_MicrosecondAddingFormatterMixin, logging.Formatter):
    pass


class JSONFormatter(_MicrosecondAddingFormatterMixin, BaseJSONFormatter):
    def process_log_record(self, log_record):
        rename_map = {
            "asctime": "time",
            "app_name": "application",
            "run_id": "runId",
        }
        for key, newkey in rename_map.items():
            log_record[newkey] = log_record.pop(key, None)
        log_record["logType"] = "simulation"
        return log_record
