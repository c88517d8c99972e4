"""
Leader-node pub/sub service.

The same ``Broker`` object backs the asyncio TCP server and the simulator.
It only ever sees headers; under lazy routing payload bytes never pass
through it, which the byte counters make observable.
"""
import logging
from dataclasses import dataclass

from core.exceptions import DuplicateTopic, FrameTooLarge, UnknownTopic
from core.types import DEFAULT_MAX_PAYLOAD_BYTES
from wire.codec import encode
from wire.messages import PublishHeader

from .queue import TopicQueue

logger = logging.getLogger(__name__)

FRAME_LIMIT_SLACK = 64 * 1024


@dataclass
class BrokerStats:
    headers_in: int = 0
    headers_out: int = 0
    frame_bytes_in: int = 0
    frame_bytes_out: int = 0
    payload_bytes_in: int = 0
    payload_bytes_out: int = 0

    def as_dict(self):
        return dict(self.__dict__)


class Broker:
    def __init__(self, retention=65536, shared_window=16, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
        self.retention = retention
        self.shared_window = shared_window
        self.max_payload = max_payload
        self.max_frame_bytes = max_payload + FRAME_LIMIT_SLACK
        self.topics = {}
        self.stats = BrokerStats()

    def create_topic(self, config):
        if config.topic in self.topics:
            raise DuplicateTopic(f'topic {config.topic!r} already exists')
        self.topics[config.topic] = TopicQueue(config, self.retention, self.shared_window)
        logger.info('Created topic %s with streams %s (%s)',
                    config.topic, ', '.join(config.streams), config.join_mode.value)
        return config

    def queue(self, topic):
        try:
            return self.topics[topic]
        except KeyError:
            raise UnknownTopic(f'topic {topic!r} does not exist') from None

    def topic_config(self, topic):
        return self.queue(topic).config

    def publish_header(self, header, now=None):
        """Append ``header`` and push it to subscribers; returns its sequence number."""
        queue = self.queue(header.topic)
        if now is not None:
            header = header.published_at(now)
        if not header.is_lazy and len(header.inline) > self.max_payload:
            raise FrameTooLarge(f'inline payload of {len(header.inline)} bytes exceeds {self.max_payload}')
        frame_bytes = len(encode(PublishHeader(header), self.max_payload))
        if frame_bytes > self.max_frame_bytes:
            raise FrameTooLarge(f'frame of {frame_bytes} bytes exceeds {self.max_frame_bytes}')
        seq = queue.append(header, frame_bytes)
        self.stats.headers_in += 1
        self.stats.frame_bytes_in += frame_bytes
        if not header.is_lazy:
            self.stats.payload_bytes_in += len(header.inline)
        logger.debug('Published %s/%s@%d as #%d', header.topic, header.stream, header.event_ts, seq)
        queue.pump()
        return seq

    def subscribe(self, topic, consumer_id, shared, sink):
        """
        Register ``sink`` for deliveries. The sink receives ``Delivery`` and
        ``GapNotice`` objects and returns False to refuse (backpressure).
        """
        queue = self.queue(topic)
        counted = self._counting_sink(sink)
        sub = queue.subscribe(consumer_id, shared, counted)
        logger.info('Consumer %s subscribed to %s (%s)', consumer_id, topic, 'shared' if shared else 'exclusive')
        queue.pump_one(consumer_id)
        return sub

    def _counting_sink(self, sink):
        stats = self.stats

        def deliver(item):
            accepted = sink(item)
            if accepted and hasattr(item, 'header'):
                stats.headers_out += 1
                stats.frame_bytes_out += item.frame_bytes
                if not item.header.is_lazy:
                    stats.payload_bytes_out += len(item.header.inline)
            return accepted

        return deliver

    def ack(self, topic, consumer_id, sequence):
        queue = self.queue(topic)
        queue.ack(consumer_id, sequence)
        queue.pump()

    def resume(self, topic, consumer_id):
        """Retry deliveries a consumer refused earlier."""
        self.queue(topic).pump_one(consumer_id)

    def unsubscribe(self, topic, consumer_id):
        queue = self.topics.get(topic)
        if queue is None:
            return
        if queue.unsubscribe(consumer_id) is not None:
            logger.info('Consumer %s left %s', consumer_id, topic)
        queue.pump()
