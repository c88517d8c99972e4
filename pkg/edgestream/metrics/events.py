"""
Append-only metric event log.

One line per event, fields separated by tabs in a fixed order:

    ts_micros  node  kind  topic  stream  event_ts  seq  extra

Absent fields are written as ``-``; ``extra`` is compact JSON with sorted
keys so identical runs produce byte-identical files. Each node writes its
own ``<node>.log``.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from core.exceptions import IncompleteLog

logger = logging.getLogger(__name__)

ABSENT = '-'


class EventKind(str, Enum):
    PRODUCE_BEGIN = 'produce_begin'
    PRODUCE_END = 'produce_end'
    BROKER_DELIVER = 'broker_deliver'
    FETCH_BEGIN = 'fetch_begin'
    FETCH_END = 'fetch_end'
    JOIN_EMIT = 'join_emit'
    MODEL_BEGIN = 'model_begin'
    MODEL_END = 'model_end'
    PREDICT_PUBLISH = 'predict_publish'
    SKIP = 'skip'
    TOPIC_CONFIG = 'topic_config'
    SHUTDOWN = 'shutdown'


class SkipReason(str, Enum):
    STALE = 'stale'
    SKEW = 'skew'
    SUPERSEDED_BY_HYBRID = 'superseded_by_hybrid'
    SUPERSEDED_IN_WINDOW = 'superseded_in_window'
    SHARED_REBALANCE = 'shared_rebalance'
    FAILED_FETCH = 'failed_fetch'
    WARMUP = 'warmup'
    SAMPLED_OUT = 'sampled_out'
    LATE = 'late'
    MODEL_ERROR = 'model_error'
    UNPROCESSED = 'unprocessed'


@dataclass(frozen=True)
class MetricEvent:
    at: int
    node: str
    kind: EventKind
    topic: str = ''
    stream: str = ''
    event_ts: Optional[int] = None
    seq: Optional[int] = None
    extra: dict = field(default_factory=dict, hash=False)

    @property
    def item(self):
        return (self.topic, self.stream, self.event_ts)

    @property
    def reason(self):
        return self.extra.get('reason')

    def to_line(self):
        fields = [
            str(self.at), self.node, self.kind.value, self.topic or ABSENT, self.stream or ABSENT,
            ABSENT if self.event_ts is None else str(self.event_ts),
            ABSENT if self.seq is None else str(self.seq),
            json.dumps(self.extra, sort_keys=True, separators=(',', ':')),
        ]
        return '\t'.join(fields)

    @classmethod
    def from_line(cls, line, source='log'):
        parts = line.rstrip('\n').split('\t')
        if len(parts) != 8:
            raise IncompleteLog(f'{source}: expected 8 fields, got {len(parts)}')
        at, node, kind, topic, stream, event_ts, seq, extra = parts
        try:
            return cls(
                at=int(at),
                node=node,
                kind=EventKind(kind),
                topic='' if topic == ABSENT else topic,
                stream='' if stream == ABSENT else stream,
                event_ts=None if event_ts == ABSENT else int(event_ts),
                seq=None if seq == ABSENT else int(seq),
                extra=json.loads(extra),
            )
        except ValueError as exc:
            raise IncompleteLog(f'{source}: {exc}') from exc


class EventLog:
    """Event sink of one node, optionally mirrored to ``<directory>/<node>.log``."""

    def __init__(self, node, clock, directory=None):
        self.node = node
        self.clock = clock
        self.events = []
        self.path = None
        self._file = None
        if directory:
            os.makedirs(directory, exist_ok=True)
            self.path = os.path.join(directory, f'{node}.log')
            self._file = open(self.path, 'w', encoding='utf-8')

    def emit(self, kind, topic='', stream='', event_ts=None, seq=None, at=None, **extra):
        event = MetricEvent(
            at=self.clock.now() if at is None else at,
            node=self.node,
            kind=EventKind(kind),
            topic=topic,
            stream=stream,
            event_ts=event_ts,
            seq=seq,
            extra=extra,
        )
        self.events.append(event)
        if self._file is not None:
            self._file.write(event.to_line() + '\n')
        return event

    def item(self, kind, header, seq=None, at=None, **extra):
        return self.emit(kind, header.topic, header.stream, header.event_ts, seq, at, **extra)

    def skip(self, header, reason, seq=None, at=None, **extra):
        return self.item(EventKind.SKIP, header, seq, at, reason=SkipReason(reason).value, **extra)

    def flush(self):
        if self._file is not None:
            self._file.flush()

    def shutdown(self, **extra):
        self.emit(EventKind.SHUTDOWN, **extra)
        self.close()

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None


class LogSet:
    """The event logs of every node taking part in one run."""

    def __init__(self, clock, directory=None):
        self.clock = clock
        self.directory = directory
        self.logs = {}

    def __getitem__(self, node):
        if node not in self.logs:
            self.logs[node] = EventLog(node, self.clock, self.directory)
        return self.logs[node]

    def events(self):
        return merge_events([log.events for log in self.logs.values()])

    def shutdown(self, **extra):
        for node in sorted(self.logs):
            self.logs[node].shutdown(**extra)

    def close(self):
        for log in self.logs.values():
            log.close()


def merge_events(per_node):
    """Merge per-node event lists by time; ties keep node name then log order."""
    tagged = [
        (event.at, event.node, index, event)
        for events in per_node
        for index, event in enumerate(events)
    ]
    tagged.sort(key=lambda item: item[:3])
    return [event for *_, event in tagged]


def read_log(path):
    with open(path, encoding='utf-8') as fh:
        return [
            MetricEvent.from_line(line, f'{path}:{number}')
            for number, line in enumerate(fh, start=1)
            if line.strip()
        ]


def read_logs(directory):
    """Read every ``*.log`` file in ``directory`` into one merged event list."""
    if not os.path.isdir(directory):
        raise IncompleteLog(f'log directory {directory} does not exist')
    names = sorted(name for name in os.listdir(directory) if name.endswith('.log'))
    return merge_events([read_log(os.path.join(directory, name)) for name in names])
