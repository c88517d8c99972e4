"""Async client for the live broker endpoint."""
import asyncio
import logging

from core.exceptions import BROKER_ERRORS, BrokerError, TransportFailure
from core.types import DEFAULT_MAX_PAYLOAD_BYTES
from wire.messages import Ack, CreateTopic, Deliver, Error, Gap, PublishHeader, Subscribe
from wire.stream import read_message, write_message

from .queue import Delivery, GapNotice

logger = logging.getLogger(__name__)


def raise_remote(error):
    raise BROKER_ERRORS.get(error.code, BrokerError)(error.message)


class BrokerClient:
    def __init__(self, reader, writer, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
        self.reader = reader
        self.writer = writer
        self.max_payload = max_payload
        self.config = None
        self.topic = None
        self._lock = asyncio.Lock()

    @classmethod
    async def connect(cls, host, port, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError as exc:
            raise TransportFailure(f'cannot reach broker at {host}:{port}: {exc}') from exc
        return cls(reader, writer, max_payload)

    async def _receive(self):
        message = await read_message(self.reader, self.max_payload)
        if message is None:
            raise TransportFailure('broker closed the connection')
        if isinstance(message, Error):
            raise_remote(message)
        return message

    async def _request(self, message):
        async with self._lock:
            await write_message(self.writer, message, self.max_payload)
            return await self._receive()

    async def create_topic(self, config):
        await self._request(CreateTopic(config))
        return config

    async def publish(self, header):
        reply = await self._request(PublishHeader(header))
        return reply.sequence

    async def subscribe(self, topic, consumer_id, shared=False):
        """Subscribe this connection; returns the topic's configuration."""
        reply = await self._request(Subscribe(topic, consumer_id, shared))
        if not isinstance(reply, CreateTopic):
            raise BrokerError(f'expected topic config after subscribe, got {type(reply).__name__}')
        self.config = reply.config
        self.topic = topic
        logger.info('Subscribed %s to %s', consumer_id, topic)
        return reply.config

    async def deliveries(self):
        """Yield ``Delivery`` and ``GapNotice`` objects until the broker goes away."""
        while True:
            message = await read_message(self.reader, self.max_payload)
            if message is None:
                return
            if isinstance(message, Deliver):
                yield Delivery(message.header.topic, message.sequence, message.header, 0)
            elif isinstance(message, Gap):
                yield GapNotice(message.topic, message.from_sequence, message.to_sequence)
            elif isinstance(message, Error):
                raise_remote(message)

    async def ack(self, sequence):
        await write_message(self.writer, Ack(sequence), self.max_payload)

    async def close(self):
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except ConnectionError:
            pass
