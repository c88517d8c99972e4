"""
Stream generators: deterministic (event_ts, payload_size) schedules.

Times are integer microseconds. Every schedule is a pure function of the
StreamSpec, the run length and the seeded ``random.Random`` handed in.
"""
import csv
import logging
import random
from dataclasses import dataclass, field
from typing import Optional

from core.exceptions import ConfigError
from metrics.report import label_at
from runtime.operators import VALUE, encode_value

logger = logging.getLogger(__name__)

PERIODIC = 'periodic'
BURSTY = 'bursty'
TRACE = 'trace'

VALUES_COUNTER = 'counter'
VALUES_CONSTANT = 'constant'
VALUES_LABEL = 'label'


@dataclass(frozen=True)
class StreamSpec:
    stream: str
    topic: str
    node: str
    pattern: str = PERIODIC
    payload_size: int = VALUE.size
    period: Optional[int] = None
    start: int = 0
    delay: int = 0
    quiet: int = 0
    quiet_jitter: int = 0
    burst_rate_hz: Optional[float] = None
    burst_length: Optional[int] = None
    rows: tuple = ()
    trace_file: str = ''
    values: str = VALUES_COUNTER
    constant: int = 0
    routing: Optional[str] = None


def periodic(start, period, run_length):
    if not period or period <= 0:
        raise ConfigError(f'period must be positive, got {period}')
    return list(range(start, run_length, period))


def bursty(start, rate_hz, burst_length, quiet, run_length, rng=None, quiet_jitter=0):
    """Alternate bursts at ``rate_hz`` lasting ``burst_length`` with quiet gaps."""
    if not rate_hz or rate_hz <= 0:
        raise ConfigError(f'burst rate must be positive, got {rate_hz}')
    spacing = int(round(1_000_000 / rate_hz))
    if spacing <= 0:
        raise ConfigError(f'burst rate {rate_hz} Hz is too fast for microsecond timestamps')
    burst_length = burst_length or run_length
    times = []
    phase = start
    while phase < run_length:
        ts = phase
        while ts < min(phase + burst_length, run_length):
            times.append(ts)
            ts += spacing
        gap = quiet
        if quiet_jitter and rng is not None:
            gap += rng.randint(-quiet_jitter, quiet_jitter)
        phase = ts + max(gap, 0)
    return times


def read_trace(path):
    """Rows of ``event_ts_ms,payload_size``; a header line is allowed."""
    rows = []
    try:
        with open(path, newline='', encoding='utf-8') as fh:
            for number, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].startswith('#'):
                    continue
                try:
                    rows.append((float(row[0]), int(row[1])))
                except (ValueError, IndexError):
                    if number == 1:
                        continue
                    raise ConfigError(f'{path}:{number}: expected event_ts_ms,payload_size') from None
    except OSError as exc:
        raise ConfigError(f'cannot read trace {path}: {exc}') from exc
    return rows


def generate(spec, run_length, rng=None):
    """Timed payload schedule ``[(event_ts, payload_size), ...]`` of one stream."""
    if spec.pattern == PERIODIC:
        return [(ts, spec.payload_size) for ts in periodic(spec.start, spec.period, run_length)]
    if spec.pattern == BURSTY:
        times = bursty(spec.start, spec.burst_rate_hz, spec.burst_length, spec.quiet, run_length,
                       rng, spec.quiet_jitter)
        return [(ts, spec.payload_size) for ts in times]
    if spec.pattern == TRACE:
        rows = list(spec.rows) or read_trace(spec.trace_file)
        schedule = sorted((int(round(ts_ms * 1_000)) + spec.start, size) for ts_ms, size in rows)
        return [(ts, size) for ts, size in schedule if ts < run_length]
    raise ConfigError(f'unknown stream pattern {spec.pattern!r}')


def label_timeline(rng, duration, classes, min_segment, max_segment):
    """Step function of labels: segments of random length, each label differing from the last."""
    if not classes:
        raise ConfigError('a label timeline needs at least one class')
    if min_segment <= 0 or max_segment < min_segment:
        raise ConfigError('label segments need 0 < min_segment <= max_segment')
    timeline = []
    ts = 0
    previous = None
    while ts < duration:
        choices = [c for c in classes if c != previous] or list(classes)
        label = rng.choice(choices)
        timeline.append((ts, label))
        previous = label
        ts += rng.randint(min_segment, max_segment)
    return timeline


def item_value(spec, index, event_ts, timeline=None):
    if spec.values == VALUES_CONSTANT:
        return spec.constant
    if spec.values == VALUES_LABEL:
        if timeline is None:
            raise ConfigError(f'stream {spec.stream!r} carries labels but the scenario has no label timeline')
        label = label_at(timeline, event_ts)
        return -1 if label is None else label
    return index


def make_payload(value, size):
    """Payloads of eight bytes or more carry ``value``; shorter ones are filler."""
    if size < VALUE.size:
        return bytes(size)
    return encode_value(value, size)


@dataclass
class Schedule:
    spec: StreamSpec
    items: list = field(default_factory=list)

    @classmethod
    def build(cls, spec, run_length, seed):
        # Each stream draws from its own generator so adding a stream never
        # shifts another stream's schedule.
        rng = random.Random(f'{seed}:{spec.stream}')
        items = generate(spec, run_length, rng)
        logger.debug('Stream %s: %d items over %d us', spec.stream, len(items), run_length)
        return cls(spec, items)
