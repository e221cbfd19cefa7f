import functools
import logging
import time

from sbc_forge.clients.statsd.statsd_client import statsd_client

logger = logging.getLogger(__name__)


def statsd(namespace):
    def time_function(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.monotonic()
            res = func(*args, **kwargs)
            elapsed_time = time.monotonic() - start_time
            statsd_client.incr(f"{namespace}.{func.__name__}")
            statsd_client.timing(f"{namespace}.{func.__name__}", elapsed_time)
            logger.debug("%s call %s took %.4f", namespace, func.__name__, elapsed_time)
            return res

        return wrapper

    return time_function
