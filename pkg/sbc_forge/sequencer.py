import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

from ordered_set import OrderedSet

from sbc_forge import DEFAULT_REPUMP_GAP, DEFAULT_REPUMP_PULSE, US

# Residual block time below this is float noise, not a padding pulse.
PADDING_THRESHOLD = 1e-12
COUNT_EPSILON = 1e-9

IP, OP = 0, 1


class ScheduleError(ValueError):
    pass


class ScheduleFormatError(ValueError):
    def __init__(self, line_number, line):
        self.line_number = line_number
        self.line = line
        super().__init__(f"Line {line_number}: cannot parse {line!r}")


@dataclass(frozen=True)
class RSBPulse:
    mode_index: int
    beta: int
    duration: float
    quench_on: bool = True
    padding: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError(f"Sideband order must be >= 1, got {self.beta}")
        if self.duration < 0:
            raise ValueError(f"Pulse duration must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class Repump:
    duration: float = DEFAULT_REPUMP_PULSE
    gap: float = DEFAULT_REPUMP_GAP


@dataclass(frozen=True)
class Probe:
    pass


class PulseSchedule:
    def __init__(self, events=()):
        self.events = tuple(events)
        self._validate()

    def _validate(self):
        for index, event in enumerate(self.events):
            following = self.events[index + 1] if index + 1 < len(self.events) else None
            preceding = self.events[index - 1] if index else None
            if isinstance(event, RSBPulse) and not isinstance(following, Repump):
                raise ScheduleError(f"RSB pulse at event {index} is not followed by a repump")
            if isinstance(event, Repump) and not isinstance(preceding, RSBPulse):
                raise ScheduleError(f"Repump at event {index} does not follow an RSB pulse")
            if not isinstance(event, (RSBPulse, Repump, Probe)):
                raise ScheduleError(f"Unknown event {event!r}")

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def __getitem__(self, index):
        return self.events[index]

    def __eq__(self, other):
        return isinstance(other, PulseSchedule) and self.events == other.events

    def __repr__(self):
        return f"{self.__class__.__name__}({len(self.rsb_pulses())} pulses, T_c={self.cooling_time / US:g} us)"

    def rsb_pulses(self):
        return [event for event in self.events if isinstance(event, RSBPulse)]

    @cached_property
    def cooling_time(self):
        return math.fsum(pulse.duration for pulse in self.rsb_pulses())

    @property
    def repump_count(self):
        return sum(isinstance(event, Repump) for event in self.events)

    @cached_property
    def total_time(self):
        gaps = math.fsum(event.gap for event in self.events if isinstance(event, Repump))
        return self.cooling_time + gaps

    @property
    def pulse_counts(self):
        return Counter((pulse.mode_index, pulse.beta) for pulse in self.rsb_pulses() if not pulse.padding)

    @property
    def sideband_orders(self):
        return OrderedSet(pulse.beta for pulse in self.rsb_pulses())

    @property
    def longest_pulse(self):
        return max((pulse.duration for pulse in self.rsb_pulses()), default=0.0)


def pulse_count(block_time, pulse_length):
    count = math.floor(block_time / pulse_length + COUNT_EPSILON)
    residual = block_time - count * pulse_length
    if residual < PADDING_THRESHOLD:
        residual = 0.0
    return count, residual


def _pulse_with_repump(mode_index, beta, duration, quench_on, repump, padding=False):
    return [RSBPulse(mode_index, beta, duration, quench_on, padding), repump]


def _block(mode_index, beta, block_time, pulse_length, quench_on, repump):
    count, residual = pulse_count(block_time, pulse_length)
    events = []
    for _ in range(count):
        events += _pulse_with_repump(mode_index, beta, pulse_length, quench_on, repump)
    if residual:
        events += _pulse_with_repump(mode_index, beta, residual, quench_on, repump, padding=True)
    return events


def _check_allocation(cooling_time, pulse_lengths, allocations):
    if cooling_time >= max(pulse_lengths):
        return
    for block_time, pulse_length in allocations:
        if block_time > PADDING_THRESHOLD and pulse_count(block_time, pulse_length)[0] == 0:
            raise ScheduleError(
                f"T_c={cooling_time / US:g} us leaves a {block_time / US:g} us block without a full "
                f"{pulse_length / US:g} us pulse"
            )


def _check_inputs(cooling_time, fraction, *pulse_lengths):
    if cooling_time < 0:
        raise ValueError(f"Cooling time must be >= 0, got {cooling_time}")
    if fraction is not None and not 0 <= fraction <= 1:
        raise ValueError(f"Time scaling factor must be in [0, 1], got {fraction}")
    for pulse_length in pulse_lengths:
        if pulse_length <= 0:
            raise ValueError(f"Pulse lengths must be positive, got {pulse_length}")


def _finish(events, probe):
    if probe:
        events.append(Probe())
    return PulseSchedule(events)


def build_single_ion_schedule(
    cooling_time, alpha, t_r2, t_r1, *, quench_on=True, repump=Repump(), mode_index=0, probe=False
):
    """Second-order block of alpha * T_c, then a first-order block of the rest."""
    _check_inputs(cooling_time, alpha, t_r2, t_r1)
    second_order_time = alpha * cooling_time
    first_order_time = cooling_time - second_order_time
    _check_allocation(cooling_time, (t_r1, t_r2), [(second_order_time, t_r2), (first_order_time, t_r1)])

    events = _block(mode_index, 2, second_order_time, t_r2, quench_on, repump)
    events += _block(mode_index, 1, first_order_time, t_r1, quench_on, repump)
    return _finish(events, probe)


def _mode_pulses(mode_index, block_time, pulse_length, quench_on):
    count, residual = pulse_count(block_time, pulse_length)
    pulses = [RSBPulse(mode_index, 1, pulse_length, quench_on)] * count
    if residual:
        pulses.append(RSBPulse(mode_index, 1, residual, quench_on, padding=True))
    return pulses


def build_two_mode_schedule(cooling_time, alpha_prime, t_ip, t_op, *, quench_on=True, repump=Repump(), probe=False):
    """
    The mode with more pulses first runs its surplus back to back, then the
    two modes alternate ip, op. Each mode's padding pulse is its last pulse,
    so padding never breaks the alternation.
    """
    _check_inputs(cooling_time, alpha_prime, t_ip, t_op)
    op_time = alpha_prime * cooling_time
    ip_time = cooling_time - op_time
    _check_allocation(cooling_time, (t_ip, t_op), [(ip_time, t_ip), (op_time, t_op)])

    ip_pulses = _mode_pulses(IP, ip_time, t_ip, quench_on)
    op_pulses = _mode_pulses(OP, op_time, t_op, quench_on)

    surplus = len(ip_pulses) - len(op_pulses)
    leading, ip_pulses, op_pulses = (
        (ip_pulses[:surplus], ip_pulses[surplus:], op_pulses)
        if surplus >= 0
        else (op_pulses[:-surplus], ip_pulses, op_pulses[-surplus:])
    )
    events = []
    for pulse in [*leading, *(pulse for pair in zip(ip_pulses, op_pulses) for pulse in pair)]:
        events += [pulse, repump]
    return _finish(events, probe)


def build_high_order_schedule(
    cooling_time, beta_max, t_pulse, *, quench_on=True, repump=Repump(), mode_index=0, probe=False
):
    if int(beta_max) != beta_max or beta_max < 1:
        raise ValueError(f"beta_max must be an integer >= 1, got {beta_max}")
    beta_max = int(beta_max)
    _check_inputs(cooling_time, None, t_pulse)
    block_time = cooling_time / beta_max
    _check_allocation(cooling_time, (t_pulse,), [(block_time, t_pulse)])

    events = []
    for beta in range(beta_max, 0, -1):
        events += _block(mode_index, beta, block_time, t_pulse, quench_on, repump)
    return _finish(events, probe)


def _format_us(seconds):
    return f"{seconds / US:.12g}"


def format_schedule(schedule):
    lines = []
    for event in schedule:
        if isinstance(event, RSBPulse):
            lines.append(
                f"RSB mode={event.mode_index} beta={event.beta} "
                f"dur_us={_format_us(event.duration)} quench={int(event.quench_on)}"
            )
        elif isinstance(event, Repump):
            lines.append(f"REPUMP dur_us={_format_us(event.duration)} gap_us={_format_us(event.gap)}")
        else:
            lines.append("PROBE")
    return "\n".join(lines) + "\n" if lines else ""


_RSB_LINE = re.compile(r"^RSB mode=(\d+) beta=(\d+) dur_us=(\S+) quench=([01])$")
_REPUMP_LINE = re.compile(r"^REPUMP dur_us=(\S+) gap_us=(\S+)$")


def parse_schedule(text):
    events = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if match := _RSB_LINE.match(line):
                mode_index, beta, duration, quench = match.groups()
                events.append(RSBPulse(int(mode_index), int(beta), float(duration) * US, quench == "1"))
            elif match := _REPUMP_LINE.match(line):
                events.append(Repump(float(match.group(1)) * US, float(match.group(2)) * US))
            elif line == "PROBE":
                events.append(Probe())
            else:
                raise ScheduleFormatError(line_number, raw)
        except ValueError as e:
            if isinstance(e, ScheduleFormatError):
                raise
            raise ScheduleFormatError(line_number, raw) from e
    return PulseSchedule(events)
