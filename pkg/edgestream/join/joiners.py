"""
Join strategies over a topic's streams.

Every joiner is a single-writer state machine fed in arrival order:
``on_arrival(header, now)`` returns the tuple the arrival triggers (if
any) and ``advance_to(now)`` closes time-triggered windows. Items that
leave a joiner without ever being placed in a tuple are reported through
``take_skips()`` with the reason, so the runtime can account for them.
Timestamps fed to the join are ``header.basis_ts(config.time_basis)``.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Optional

from core.exceptions import UnknownStream
from core.timing import compute_skew
from core.types import JoinMode, JoinTuple, Slot, TimeBasis

logger = logging.getLogger(__name__)

WARMUP = 'warmup'
SUPERSEDED_BY_HYBRID = 'superseded_by_hybrid'
SUPERSEDED_IN_WINDOW = 'superseded_in_window'
LATE = 'late'


class Joiner:
    mode = None

    def __init__(self, config):
        self.config = config
        self.streams = config.streams
        self.basis = config.time_basis
        count = len(config.streams)
        self.latest = [None] * count
        # None stands for minus infinity.
        self.latest_ts = [None] * count
        self.emitted = 0
        self._skips = []

    def slot_of(self, header):
        index = self.config.slot_index(header.stream)
        if index is None or header.topic != self.config.topic:
            raise UnknownStream(f'{header.topic}/{header.stream} is not a stream of {self.config.topic!r}')
        return index

    def ts(self, header):
        return header.basis_ts(self.basis)

    def skip(self, header, reason):
        self._skips.append((header, reason))

    def take_skips(self):
        skips, self._skips = self._skips, []
        return skips

    def ready_without(self, index):
        return all(item is not None for i, item in enumerate(self.latest) if i != index)

    def remember(self, index, header):
        t = self.ts(header)
        if self.latest_ts[index] is None or t > self.latest_ts[index]:
            self.latest[index] = header
            self.latest_ts[index] = t
            return True
        return False

    def build(self, headers, trigger, now, new_information=True):
        self.emitted += 1
        return JoinTuple(
            topic=self.config.topic,
            slots=tuple(Slot(h) for h in headers),
            trigger_stream=trigger.stream,
            trigger_ts=self.ts(trigger),
            emit_ts=now,
            new_information=new_information,
        )

    def on_arrival(self, header, now):
        raise NotImplementedError

    def advance_to(self, now):
        return []

    def pending_items(self):
        """Items still held by the joiner that were never placed in a tuple."""
        return []


class DataTriggeredJoiner(Joiner):
    """Emit on every arrival once every other stream has produced something."""
    mode = JoinMode.DATA_TRIGGERED

    def emit_for(self, index, header, now):
        headers = list(self.latest)
        headers[index] = header
        return self.build(headers, header, now)

    def on_arrival(self, header, now):
        index = self.slot_of(header)
        joined = None
        if self.ready_without(index):
            joined = self.emit_for(index, header, now)
        else:
            self.skip(header, WARMUP)
        self.remember(index, header)
        return joined


class HybridJoiner(DataTriggeredJoiner):
    """
    Data-triggered join throttled to one emission per ``min_interval``.
    Suppressed arrivals still update the latest state; there is no timer.
    """
    mode = JoinMode.HYBRID

    def __init__(self, config, min_interval=None):
        super().__init__(config)
        self.min_interval = config.effective_min_interval() if min_interval is None else min_interval
        self.last_emit_ts = None

    def on_arrival(self, header, now):
        index = self.slot_of(header)
        joined = None
        if not self.ready_without(index):
            self.skip(header, WARMUP)
        elif self.last_emit_ts is not None and now - self.last_emit_ts < self.min_interval:
            self.skip(header, SUPERSEDED_BY_HYBRID)
        else:
            joined = self.emit_for(index, header, now)
            self.last_emit_ts = now
        self.remember(index, header)
        return joined


class TimeTriggeredJoiner(Joiner):
    """
    One tuple per window of width ``window`` with boundaries at multiples
    of the width. Arrivals are buffered and folded into the latest state
    when the window they fall in closes; stragglers are accepted for one
    extra window and dropped as late after that.
    """
    mode = JoinMode.TIME_TRIGGERED

    def __init__(self, config):
        super().__init__(config)
        self.window = config.window
        self.next_boundary = None
        self.buffer = []
        self.previous = None

    def _start(self, now):
        if self.next_boundary is None:
            self.next_boundary = (now // self.window + 1) * self.window

    def on_arrival(self, header, now):
        index = self.slot_of(header)
        self._start(now)
        closed = self.next_boundary - self.window
        if self.ts(header) < closed - self.window:
            logger.debug('Dropping late %s@%d, window %d already closed', header.stream, self.ts(header), closed)
            self.skip(header, LATE)
            return None
        self.buffer.append((index, header))
        return None

    def advance_to(self, now):
        self._start(now)
        tuples = []
        while self.next_boundary <= now:
            joined = self.close_window(self.next_boundary, now)
            if joined is not None:
                tuples.append(joined)
            self.next_boundary += self.window
        return tuples

    def close_window(self, window_end, now):
        due = [(i, h) for i, h in self.buffer if self.ts(h) < window_end]
        self.buffer = [(i, h) for i, h in self.buffer if self.ts(h) >= window_end]
        superseded = []
        for index, header in sorted(due, key=lambda item: self.ts(item[1])):
            previous = self.latest[index]
            if self.remember(index, header):
                if previous is not None:
                    superseded.append(previous)
            else:
                superseded.append(header)
        if not all(item is not None for item in self.latest):
            for _, header in due:
                self.skip(header, WARMUP)
            return None
        for header in superseded:
            self.skip(header, SUPERSEDED_IN_WINDOW)
        headers = tuple(self.latest)
        trigger = max(headers, key=self.ts)
        new_information = headers != self.previous
        self.previous = headers
        return self.build(headers, trigger, now, new_information)

    def pending_items(self):
        return [header for _, header in self.buffer]


class ApproximateTimeJoiner(Joiner):
    """
    Baseline that never reuses data: a tuple is formed only when every
    stream has an unused message, from the newest unused message of each;
    older unused messages are discarded.
    """
    mode = JoinMode.APPROXIMATE_TIME

    def __init__(self, config):
        super().__init__(config)
        self.queues = [deque() for _ in config.streams]

    def on_arrival(self, header, now):
        index = self.slot_of(header)
        self.queues[index].append(header)
        self.remember(index, header)
        if not all(self.queues):
            return None
        headers = []
        for queue in self.queues:
            newest = max(queue, key=self.ts)
            for queued in queue:
                if queued is not newest:
                    self.skip(queued, SUPERSEDED_IN_WINDOW)
            queue.clear()
            headers.append(newest)
        return self.build(headers, header, now)

    def pending_items(self):
        return [header for queue in self.queues for header in queue]


@dataclass(frozen=True)
class SkewVerdict:
    accepted: bool
    skew: int


def tuple_timestamps(joined, basis=TimeBasis.EVENT_TIME):
    return [slot.header.basis_ts(basis) for slot in joined.slots]


def skew_filter(joined, max_skew, basis=TimeBasis.EVENT_TIME):
    skew = compute_skew(tuple_timestamps(joined, basis))
    return SkewVerdict(max_skew is None or skew <= max_skew, skew)


def expired_slots(joined, max_skew, basis=TimeBasis.EVENT_TIME):
    """Indices of slots older than ``max_skew`` relative to the tuple's newest slot."""
    if max_skew is None:
        return []
    stamps = tuple_timestamps(joined, basis)
    newest = max(stamps)
    return [i for i, ts in enumerate(stamps) if newest - ts > max_skew]


_JOINERS = {
    JoinMode.DATA_TRIGGERED: DataTriggeredJoiner,
    JoinMode.TIME_TRIGGERED: TimeTriggeredJoiner,
    JoinMode.HYBRID: HybridJoiner,
    JoinMode.APPROXIMATE_TIME: ApproximateTimeJoiner,
}


def make_joiner(config, mode: Optional[JoinMode] = None):
    """Build the joiner a topic asks for; a data-triggered topic with a target frequency becomes hybrid."""
    return _JOINERS[JoinMode(mode) if mode else config.effective_mode()](config)
