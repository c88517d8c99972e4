"""
Peer-to-peer payload fetch.

``FetchClient`` holds the consumer side (cache, freshness pre-check and
counters) without owning a transport: ``prepare`` either answers from the
cache or returns the FetchRequest to send, and ``complete`` turns the
FetchResponse into bytes. The simulator carries requests over its virtual
network; live mode uses ``AsyncFetchTransport`` through ``fetch``.
"""
import asyncio
import logging
from dataclasses import dataclass

from core.exceptions import DecodeError, Evicted, NotFound, StaleRejected, TransportFailure
from core.timing import WallClock, age
from core.types import DEFAULT_MAX_PAYLOAD_BYTES
from wire.messages import FetchRequest, FetchResponse, FetchStatus
from wire.stream import read_message, write_message

from .cache import FetchCache

logger = logging.getLogger(__name__)

_STATUS_ERRORS = {
    FetchStatus.NOT_FOUND: NotFound,
    FetchStatus.EVICTED: Evicted,
    FetchStatus.STALE_REJECTED: StaleRejected,
}


@dataclass
class FetchCounters:
    requests: int = 0
    cache_hits: int = 0
    bytes_fetched: int = 0
    stale_rejected: int = 0
    failures: int = 0


class FetchClient:
    def __init__(self, cache_bytes=256 * 1024 ** 2):
        self.cache = FetchCache(cache_bytes)
        self.counters = FetchCounters()
        self.fetched = set()

    def prepare(self, header, now=None, threshold=None):
        """
        Return ``(payload, None)`` on a cache hit or ``(None, request)`` when
        the payload must be fetched. Raises StaleRejected without moving any
        payload bytes when the header is already past ``threshold``.
        """
        locator = header.locator
        if threshold is not None and now is not None and age(header.event_ts, now) > threshold:
            self.counters.stale_rejected += 1
            raise StaleRejected(f'{header.stream}@{header.event_ts} is {age(header.event_ts, now)}us old')
        cached = self.cache.get(locator)
        if cached is not None:
            self.counters.cache_hits += 1
            return cached, None
        return None, FetchRequest(locator, threshold)

    def complete(self, request, response):
        if response.status != FetchStatus.OK:
            if response.status == FetchStatus.STALE_REJECTED:
                self.counters.stale_rejected += 1
            else:
                self.counters.failures += 1
            raise _STATUS_ERRORS[response.status](f'fetch of {request.locator} answered {response.status.name}')
        if len(response.payload) != request.locator.length:
            self.counters.failures += 1
            raise TransportFailure(f'expected {request.locator.length} bytes, got {len(response.payload)}')
        self.counters.requests += 1
        self.counters.bytes_fetched += len(response.payload)
        self.fetched.add(request.locator)
        self.cache.put(request.locator, response.payload)
        return response.payload

    def fail(self, request, exc):
        self.counters.failures += 1
        logger.warning('Fetch of %s failed: %s', request.locator, exc)

    async def fetch(self, header, transport, now=None, threshold=None):
        payload, request = self.prepare(header, now, threshold)
        if request is None:
            return payload
        try:
            response = await transport.request(request)
        except TransportFailure as exc:
            self.fail(request, exc)
            raise
        return self.complete(request, response)


class AsyncFetchTransport:
    """Pooled fetch connections, one per peer, reused across requests."""

    def __init__(self, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
        self.max_payload = max_payload
        self.connections_opened = 0
        self._pool = {}
        self._locks = {}

    async def _connection(self, host, port):
        key = (host, port)
        if key not in self._pool:
            try:
                self._pool[key] = await asyncio.open_connection(host, port)
            except OSError as exc:
                raise TransportFailure(f'cannot reach {host}:{port}: {exc}') from exc
            self.connections_opened += 1
            logger.debug('Opened fetch connection to %s:%d', host, port)
        return self._pool[key]

    async def request(self, request):
        key = (request.locator.host, request.locator.port)
        lock = self._locks.setdefault(key, asyncio.Lock())
        async with lock:
            reader, writer = await self._connection(*key)
            try:
                await write_message(writer, request, self.max_payload)
                response = await read_message(reader, self.max_payload)
            except (OSError, DecodeError) as exc:
                self._pool.pop(key, None)
                writer.close()
                raise TransportFailure(f'fetch from {key[0]}:{key[1]} failed: {exc}') from exc
            if not isinstance(response, FetchResponse):
                self._pool.pop(key, None)
                writer.close()
                raise TransportFailure(f'peer {key[0]}:{key[1]} closed the fetch connection')
            return response

    async def close(self):
        for reader, writer in self._pool.values():
            writer.close()
        self._pool.clear()


class FetchServer:
    """Serves FetchRequests against one NodeStore."""

    def __init__(self, store, host='127.0.0.1', port=0, clock=None, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
        self.store = store
        self.host = host
        self.port = port
        self.clock = clock or WallClock()
        self.max_payload = max_payload
        self._server = None

    async def start(self):
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        # Locators must name the address peers can dial.
        self.store.port = self.port
        logger.info('Fetch server for %s listening on %s:%d', self.store.host, self.host, self.port)
        return self

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _handle(self, reader, writer):
        peer = writer.get_extra_info('peername')
        try:
            while True:
                try:
                    message = await read_message(reader, self.max_payload)
                except DecodeError as exc:
                    logger.warning('Bad fetch frame from %s: %s', peer, exc)
                    break
                if message is None:
                    break
                if not isinstance(message, FetchRequest):
                    logger.warning('Ignoring %s from %s on the fetch port', type(message).__name__, peer)
                    break
                await write_message(writer, self.store.serve(message, self.clock.now()), self.max_payload)
        except ConnectionError:
            pass
        finally:
            writer.close()
