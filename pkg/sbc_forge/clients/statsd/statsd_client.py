import logging
import random
import time
from socket import AF_INET, SOCK_DGRAM, gethostbyname, socket

import cachetools.func
from statsd.client.base import StatsClientBase

logger = logging.getLogger(__name__)

DNS_TTL = 15


def time_monotonic_with_jitter():
    # spread re-resolution of the collector across sweep workers
    return time.monotonic() + random.uniform(-3, 3)


class SbcStatsClient(StatsClientBase):
    """UDP statsd client that resolves the collector at most every DNS_TTL seconds."""

    def __init__(self, host, port, prefix=None):
        self._host = host
        self._port = port
        self._prefix = prefix
        self._sock = socket(AF_INET, SOCK_DGRAM)

    def _resolve(self, addr):
        return gethostbyname(addr)

    @cachetools.func.ttl_cache(maxsize=2, ttl=DNS_TTL, timer=time_monotonic_with_jitter)
    def _cached_host(self):
        try:
            return self._resolve(self._host)
        except Exception as e:
            logger.warning("Could not resolve statsd host %s: %s", self._host, e)
            return None

    def _send(self, data):
        try:
            host = self._cached_host()
            if host:
                self._sock.sendto(data.encode("ascii"), (host, self._port))
        except Exception as e:
            logger.warning("Could not send metric to statsd: %s", e)


class StatsdClient:
    def __init__(self):
        self.statsd_client = None
        self.active = False
        self.namespace = ""

    def configure(self, config):
        self.active = config.statsd_enabled
        self.namespace = f"{config.statsd_prefix}.{config.scenario}."

        if self.active:
            self.statsd_client = SbcStatsClient(config.statsd_host, config.statsd_port)
            logger.debug("Sending metrics to %s:%s as %s*", config.statsd_host, config.statsd_port, self.namespace)

    def format_stat_name(self, stat):
        return self.namespace + stat

    def incr(self, stat, count=1, rate=1):
        if self.active:
            self.statsd_client.incr(self.format_stat_name(stat), count, rate)

    def gauge(self, stat, value):
        if self.active:
            self.statsd_client.gauge(self.format_stat_name(stat), value)

    def timing(self, stat, delta, rate=1):
        # delta in seconds, sent in milliseconds
        if self.active:
            self.statsd_client.timing(self.format_stat_name(stat), delta * 1000, rate)

    def reset(self):
        self.__init__()

    def count_row(self, status):
        self.incr(f"sweep.rows.{status}")

    def gauge_fit(self, mode, fit):
        self.gauge(f"sweep.mode{mode}.t0_us", fit.t0 * 1e6)
        self.gauge(f"sweep.mode{mode}.nbar_f", fit.nbar_f)


statsd_client = StatsdClient()
