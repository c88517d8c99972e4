"""
Domain types shared by all modules.

Timestamps and durations are integer microseconds. ``None`` stands for an
unlimited duration (no skew bound, no freshness threshold, no rate limit).
"""
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NewType, Optional

from .exceptions import ConfigError, ContractViolation

Timestamp = NewType('Timestamp', int)
Duration = int
UNLIMITED = None

MAX_NAME_BYTES = 255
DEFAULT_MAX_PAYLOAD_BYTES = 64 * 1024 * 1024

_DURATION_RE = re.compile(r'^\s*(-?\d+(?:\.\d+)?)\s*(us|ms|s|m)?\s*$')
_UNIT_MICROS = {'us': 1, 'ms': 1_000, 's': 1_000_000, 'm': 60_000_000}


def ms(value):
    return int(round(value * 1_000))


def seconds(value):
    return int(round(value * 1_000_000))


def parse_duration(value, default_unit='ms'):
    """
    Convert a configured duration to microseconds.

    Numbers are read in ``default_unit``; strings may carry a unit suffix
    (``us``, ``ms``, ``s``, ``m``). ``None`` means unlimited.
    """
    if value is None:
        return UNLIMITED
    if isinstance(value, bool):
        raise ConfigError(f'Invalid duration: {value!r}')
    if isinstance(value, (int, float)):
        return int(round(value * _UNIT_MICROS[default_unit]))
    match = _DURATION_RE.match(str(value))
    if not match:
        raise ConfigError(f'Invalid duration: {value!r}')
    number, unit = match.groups()
    return int(round(float(number) * _UNIT_MICROS[unit or default_unit]))


def validate_name(name, kind='name'):
    if not isinstance(name, str) or not name:
        raise ConfigError(f'{kind} must be a nonempty string')
    if len(name.encode('utf-8')) > MAX_NAME_BYTES:
        raise ConfigError(f'{kind} {name[:32]!r}... exceeds {MAX_NAME_BYTES} bytes')
    return name


class JoinMode(str, Enum):
    TIME_TRIGGERED = 'time_triggered'
    DATA_TRIGGERED = 'data_triggered'
    HYBRID = 'hybrid'
    APPROXIMATE_TIME = 'approximate_time'


class TimeBasis(str, Enum):
    EVENT_TIME = 'event_time'
    PROCESSING_TIME = 'processing_time'


@dataclass(frozen=True)
class PayloadLocator:
    """Claim check for a payload durably logged on its source node."""
    host: str
    port: int
    segment: int
    offset: int
    length: int

    @property
    def node(self):
        return f'{self.host}:{self.port}'


@dataclass(frozen=True)
class Header:
    topic: str
    stream: str
    event_ts: int
    publish_ts: int
    locator: Optional[PayloadLocator] = None
    inline: Optional[bytes] = None

    def __post_init__(self):
        validate_name(self.topic, 'topic')
        validate_name(self.stream, 'stream')
        if (self.locator is None) == (self.inline is None):
            raise ContractViolation('Header needs exactly one of locator or inline payload')
        if self.publish_ts < self.event_ts:
            raise ContractViolation(
                f'publish_ts {self.publish_ts} precedes event_ts {self.event_ts}'
            )

    @property
    def is_lazy(self):
        return self.locator is not None

    @property
    def payload_length(self):
        return self.locator.length if self.is_lazy else len(self.inline)

    @property
    def key(self):
        return (self.topic, self.stream, self.event_ts)

    def basis_ts(self, basis):
        return self.publish_ts if basis == TimeBasis.PROCESSING_TIME else self.event_ts

    def published_at(self, publish_ts):
        # A source clock running ahead of the broker must not produce an
        # invalid header.
        return replace(self, publish_ts=max(publish_ts, self.event_ts))


@dataclass(frozen=True)
class TopicConfig:
    topic: str
    streams: tuple
    join_mode: JoinMode = JoinMode.DATA_TRIGGERED
    window: Optional[int] = None
    min_interval: Optional[int] = None
    max_skew: Optional[int] = UNLIMITED
    freshness_threshold: Optional[int] = UNLIMITED
    target_prediction_frequency: Optional[int] = UNLIMITED
    time_basis: TimeBasis = TimeBasis.EVENT_TIME

    def __post_init__(self):
        validate_name(self.topic, 'topic')
        object.__setattr__(self, 'streams', tuple(self.streams))
        object.__setattr__(self, 'join_mode', JoinMode(self.join_mode))
        object.__setattr__(self, 'time_basis', TimeBasis(self.time_basis))
        if not self.streams:
            raise ConfigError(f'topic {self.topic!r} has no streams')
        for stream in self.streams:
            validate_name(stream, 'stream')
        if len(set(self.streams)) != len(self.streams):
            raise ConfigError(f'topic {self.topic!r} lists a stream twice')
        if self.join_mode == JoinMode.TIME_TRIGGERED and not (self.window and self.window > 0):
            raise ConfigError('time_triggered join needs a positive window')
        if self.join_mode == JoinMode.HYBRID and (self.min_interval is None or self.min_interval < 0):
            raise ConfigError('hybrid join needs a nonnegative min_interval')
        for name in ('max_skew', 'freshness_threshold', 'target_prediction_frequency'):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f'{name} must be nonnegative')

    def slot_index(self, stream):
        try:
            return self.streams.index(stream)
        except ValueError:
            return None

    def effective_mode(self):
        if self.join_mode == JoinMode.DATA_TRIGGERED and self.target_prediction_frequency is not None:
            return JoinMode.HYBRID
        return self.join_mode

    def effective_min_interval(self):
        if self.join_mode == JoinMode.HYBRID:
            return self.min_interval
        if self.join_mode == JoinMode.DATA_TRIGGERED:
            return self.target_prediction_frequency
        return None

    def to_dict(self):
        return {
            'topic': self.topic,
            'streams': list(self.streams),
            'join_mode': self.join_mode.value,
            'window_us': self.window,
            'min_interval_us': self.min_interval,
            'max_skew_us': self.max_skew,
            'freshness_threshold_us': self.freshness_threshold,
            'target_prediction_frequency_us': self.target_prediction_frequency,
            'time_basis': self.time_basis.value,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            topic=data['topic'],
            streams=tuple(data['streams']),
            join_mode=data.get('join_mode', JoinMode.DATA_TRIGGERED),
            window=data.get('window_us'),
            min_interval=data.get('min_interval_us'),
            max_skew=data.get('max_skew_us'),
            freshness_threshold=data.get('freshness_threshold_us'),
            target_prediction_frequency=data.get('target_prediction_frequency_us'),
            time_basis=data.get('time_basis', TimeBasis.EVENT_TIME),
        )


@dataclass(frozen=True)
class Slot:
    """One stream's contribution to a tuple; ``payload`` is None while pending."""
    header: Header
    payload: Optional[bytes] = None
    substituted: bool = False
    missing: bool = False


@dataclass(frozen=True)
class JoinTuple:
    topic: str
    slots: tuple
    trigger_stream: str
    trigger_ts: int
    emit_ts: int
    new_information: bool = field(default=True, compare=False)

    @property
    def headers(self):
        return tuple(slot.header for slot in self.slots)

    @property
    def trigger_header(self):
        for slot in self.slots:
            if slot.header.stream == self.trigger_stream:
                return slot.header
        raise ContractViolation(f'trigger stream {self.trigger_stream!r} not in tuple')

    def signature(self):
        """Identity of a join decision, compared by log replay."""
        return (self.trigger_stream, tuple((s.header.stream, s.header.event_ts) for s in self.slots))

    def with_slot(self, index, slot):
        slots = list(self.slots)
        slots[index] = slot
        return replace(self, slots=tuple(slots))
