"""
Live-mode broker endpoint.

Every connection is a session. Requests (CreateTopic, PublishHeader,
Subscribe) are answered with Ack or Error. After a Subscribe the session
streams Deliver and Gap frames; Ack frames from the subscriber complete
shared-mode work and are not answered. One subscription per connection.
"""
import asyncio
import logging

from core.exceptions import BrokerError, DecodeError, DuplicateConsumer, EdgeStreamError
from core.timing import WallClock
from wire.messages import Ack, CreateTopic, Deliver, Error, Gap, PublishHeader, Subscribe
from wire.stream import read_message, write_message

from .queue import GapNotice

logger = logging.getLogger(__name__)


class _Session:
    def __init__(self, server, peer):
        self.server = server
        self.peer = peer
        self.outbox = asyncio.Queue()
        self.subscription = None

    @property
    def broker(self):
        return self.server.broker

    def sink(self, item):
        if isinstance(item, GapNotice):
            self.outbox.put_nowait(Gap(item.topic, item.from_sequence, item.to_sequence))
        else:
            self.outbox.put_nowait(Deliver(item.sequence, item.header))
        return True

    def handle(self, message):
        if isinstance(message, CreateTopic):
            self.broker.create_topic(message.config)
            return Ack(0)
        if isinstance(message, PublishHeader):
            return Ack(self.broker.publish_header(message.header, now=self.server.clock.now()))
        if isinstance(message, Subscribe):
            if self.subscription is not None:
                raise BrokerError('connection already carries a subscription')
            queue = self.broker.queue(message.topic)
            if message.consumer_id in queue.subscribers:
                raise DuplicateConsumer(f'consumer {message.consumer_id!r} already subscribed to {message.topic!r}')
            config = queue.config
            # The config goes out before any delivery so the consumer can build its joiner.
            self.outbox.put_nowait(CreateTopic(config))
            self.subscription = (message.topic, message.consumer_id)
            self.broker.subscribe(message.topic, message.consumer_id, message.shared, self.sink)
            return None
        if isinstance(message, Ack):
            if self.subscription is not None:
                self.broker.ack(*self.subscription, message.sequence)
            return None
        raise BrokerError(f'unexpected {type(message).__name__} from a client')

    def close(self):
        if self.subscription is not None:
            self.broker.unsubscribe(*self.subscription)
            self.subscription = None


class BrokerServer:
    def __init__(self, broker, host='127.0.0.1', port=7400, clock=None):
        self.broker = broker
        self.host = host
        self.port = port
        self.clock = clock or WallClock()
        self._server = None

    async def start(self):
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        sockname = self._server.sockets[0].getsockname()
        self.port = sockname[1]
        logger.info('Broker listening on %s:%d', self.host, self.port)
        return self

    async def serve_forever(self):
        async with self._server:
            await self._server.serve_forever()

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            logger.info('Broker on %s:%d stopped', self.host, self.port)

    async def _handle(self, reader, writer):
        peer = writer.get_extra_info('peername')
        session = _Session(self, peer)
        pump = asyncio.create_task(self._drain(session, writer))
        logger.debug('Connection from %s', peer)
        try:
            while True:
                try:
                    message = await read_message(reader, self.broker.max_payload)
                except DecodeError as exc:
                    logger.warning('Dropping connection from %s: %s', peer, exc)
                    break
                if message is None:
                    break
                try:
                    reply = session.handle(message)
                except EdgeStreamError as exc:
                    logger.warning('Request from %s failed: %s', peer, exc.message)
                    reply = Error(exc.code, exc.message)
                if reply is not None:
                    session.outbox.put_nowait(reply)
        except ConnectionError:
            pass
        finally:
            session.close()
            session.outbox.put_nowait(None)
            try:
                await pump
            except ConnectionError:
                pass
            writer.close()

    async def _drain(self, session, writer):
        while True:
            message = await session.outbox.get()
            if message is None:
                return
            await write_message(writer, message, self.broker.max_payload)
