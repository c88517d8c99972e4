"""
Per-topic header log with exclusive and shared (work-sharing) delivery.

A TopicQueue is a single-writer state machine: publishes, acks and
subscription changes for one topic must be applied sequentially.
"""
import logging
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable

from core.exceptions import DuplicateConsumer, UnknownStream

logger = logging.getLogger(__name__)

# Deliver frames carry the u64 sequence number in front of the header.
DELIVER_OVERHEAD = 8


@dataclass(frozen=True)
class Delivery:
    topic: str
    sequence: int
    header: object
    frame_bytes: int


@dataclass(frozen=True)
class GapNotice:
    topic: str
    from_sequence: int
    to_sequence: int


@dataclass
class Subscription:
    consumer_id: str
    shared: bool
    sink: Callable
    cursor: int = 0
    inflight: OrderedDict = field(default_factory=OrderedDict)


class TopicQueue:
    def __init__(self, config, retention=65536, window=16):
        self.config = config
        self.retention = retention
        self.window = window
        self.log = deque(maxlen=retention)
        self.next_seq = 0
        self.subscribers = {}
        self.shared_cursor = None
        self.redeliver = deque()
        self._rr = 0

    @property
    def topic(self):
        return self.config.topic

    @property
    def oldest_seq(self):
        return self.log[0][0] if self.log else self.next_seq

    def append(self, header, frame_bytes):
        if self.config.slot_index(header.stream) is None:
            raise UnknownStream(f'stream {header.stream!r} is not part of topic {self.topic!r}')
        seq = self.next_seq
        self.next_seq += 1
        self.log.append((seq, header, frame_bytes))
        return seq

    def entry(self, seq):
        oldest = self.oldest_seq
        if seq < oldest or seq >= self.next_seq:
            return None
        return self.log[seq - oldest]

    def subscribe(self, consumer_id, shared, sink):
        if consumer_id in self.subscribers:
            raise DuplicateConsumer(f'consumer {consumer_id!r} already subscribed to {self.topic!r}')
        sub = Subscription(consumer_id, shared, sink, cursor=self.next_seq)
        self.subscribers[consumer_id] = sub
        if shared and self.shared_cursor is None:
            self.shared_cursor = self.next_seq
        return sub

    def unsubscribe(self, consumer_id):
        sub = self.subscribers.pop(consumer_id, None)
        if sub is None:
            return None
        if sub.shared and sub.inflight:
            # Survivors get the dead consumer's unacknowledged headers.
            logger.warning('Redelivering %d in-flight headers of %s on %s',
                           len(sub.inflight), consumer_id, self.topic)
            self.redeliver.extend(sorted(sub.inflight))
        return list(sub.inflight)

    def ack(self, consumer_id, seq):
        sub = self.subscribers.get(consumer_id)
        if sub is not None and sub.shared:
            sub.inflight.pop(seq, None)

    def pump(self):
        """Push every deliverable header to its subscribers."""
        for sub in list(self.subscribers.values()):
            if not sub.shared:
                self._pump_exclusive(sub)
        self._pump_shared()

    def pump_one(self, consumer_id):
        sub = self.subscribers.get(consumer_id)
        if sub is None:
            return
        if sub.shared:
            self._pump_shared()
        else:
            self._pump_exclusive(sub)

    def _pump_exclusive(self, sub):
        while sub.cursor < self.next_seq:
            oldest = self.oldest_seq
            if sub.cursor < oldest:
                logger.warning('Consumer %s fell behind retention on %s: gap %d..%d',
                               sub.consumer_id, self.topic, sub.cursor, oldest - 1)
                if not sub.sink(GapNotice(self.topic, sub.cursor, oldest - 1)):
                    return
                sub.cursor = oldest
                continue
            seq, header, frame_bytes = self.entry(sub.cursor)
            if not sub.sink(Delivery(self.topic, seq, header, frame_bytes + DELIVER_OVERHEAD)):
                return
            sub.cursor += 1

    def _shared_consumers(self):
        return [sub for sub in self.subscribers.values() if sub.shared]

    def _next_shared_seq(self):
        while self.redeliver:
            seq = self.redeliver[0]
            if self.entry(seq) is not None:
                return seq, True
            self.redeliver.popleft()
        if self.shared_cursor is None or self.shared_cursor >= self.next_seq:
            return None, False
        if self.shared_cursor < self.oldest_seq:
            logger.warning('Shared queue on %s lost %d headers to retention',
                           self.topic, self.oldest_seq - self.shared_cursor)
            self.shared_cursor = self.oldest_seq
        return self.shared_cursor, False

    def _pump_shared(self):
        while True:
            consumers = self._shared_consumers()
            if not consumers:
                return
            seq, is_redelivery = self._next_shared_seq()
            if seq is None:
                return
            _, header, frame_bytes = self.entry(seq)
            delivery = Delivery(self.topic, seq, header, frame_bytes + DELIVER_OVERHEAD)
            count = len(consumers)
            for step in range(count):
                sub = consumers[(self._rr + step) % count]
                if len(sub.inflight) >= self.window:
                    continue
                if sub.sink(delivery):
                    sub.inflight[seq] = header
                    self._rr = (self._rr + step + 1) % count
                    break
            else:
                return
            if is_redelivery:
                self.redeliver.popleft()
            else:
                self.shared_cursor += 1
