import asyncio
import os
import tempfile

from django.test import SimpleTestCase

from core.exceptions import Evicted, NotFound, StaleRejected, StorageFull
from core.types import Header, PayloadLocator, ms
from wire.messages import FetchRequest, FetchStatus

from .cache import FetchCache
from .fetch import AsyncFetchTransport, FetchClient, FetchServer
from .log import INDEX_ENTRY, INDEX_INTERVAL, NodeStore

MiB = 1024 * 1024


def header_for(locator, event_ts, stream='cam'):
    return Header('T', stream, event_ts, event_ts, locator=locator)


class PayloadLogTests(SimpleTestCase):
    def setUp(self):
        self.store = NodeStore('node-a', 7000, retention_bytes=5 * MiB)

    def test_distinct_locators(self):
        payloads = [b'one', b'two', b'three']
        locators = [self.store.append('cam', ts, p) for ts, p in enumerate(payloads)]
        self.assertEqual(len(set(locators)), 3)
        self.assertEqual([self.store.read(loc) for loc in locators], payloads)

    def test_round_trip(self):
        locator = self.store.append('cam', 5, b'\x00\x01payload')
        self.assertEqual(self.store.read(locator), b'\x00\x01payload')
        self.assertEqual(locator.length, 9)
        self.assertEqual(self.store.record_ts(locator), 5)

    def test_retention_evicts_oldest(self):
        locators = [self.store.append('cam', ts, bytes(MiB)) for ts in range(10)]
        with self.assertRaises(Evicted):
            self.store.read(locators[0])
        self.assertEqual(len(self.store.read(locators[-1])), MiB)
        self.assertEqual(self.store.log('cam').live_bytes, 5 * MiB)

    def test_payload_larger_than_retention(self):
        with self.assertRaises(StorageFull):
            self.store.append('cam', 0, bytes(6 * MiB))

    def test_streams_share_segment_numbering(self):
        first = self.store.append('cam', 0, b'a')
        second = self.store.append('mic', 0, b'b')
        self.assertNotEqual(first.segment, second.segment)
        self.assertEqual(self.store.read(second), b'b')

    def test_not_found(self):
        self.store.append('cam', 0, b'abc')
        with self.assertRaises(NotFound):
            self.store.read(PayloadLocator('node-a', 7000, 99, 0, 3))
        with self.assertRaises(NotFound):
            self.store.read(PayloadLocator('node-a', 7000, 0, 5, 3))
        with self.assertRaises(NotFound):
            self.store.read(PayloadLocator('node-b', 7000, 0, 0, 3))

    def test_segment_roll_by_size_and_span(self):
        store = NodeStore('n', segment_bytes=100, segment_span=ms(10))
        a = store.append('cam', 0, bytes(60))
        b = store.append('cam', 1, bytes(60))
        c = store.append('cam', ms(20), bytes(1))
        self.assertEqual(len({a.segment, b.segment, c.segment}), 3)

    def test_seek_uses_sparse_index(self):
        store = NodeStore('n')
        locators = [store.append('cam', ts * 10, bytes([ts % 256])) for ts in range(300)]
        log = store.log('cam')
        self.assertEqual(len(log.active.index), -(-300 // INDEX_INTERVAL))
        self.assertEqual(log.seek(1234), locators[124])
        self.assertEqual(log.seek(0), locators[0])
        self.assertIsNone(log.seek(10**9))

    def test_stale_read_rejected(self):
        locator = self.store.append('cam', 0, b'x')
        with self.assertRaises(StaleRejected):
            self.store.read(locator, now=ms(600), max_age=ms(500))

    def test_serve_maps_errors_to_status(self):
        locators = [self.store.append('cam', ts, bytes(MiB)) for ts in range(10)]
        self.assertEqual(self.store.serve(FetchRequest(locators[0]), 0).status, FetchStatus.EVICTED)
        self.assertEqual(self.store.serve(FetchRequest(locators[9], 0), 100).status, FetchStatus.STALE_REJECTED)
        response = self.store.serve(FetchRequest(locators[9]), 100)
        self.assertEqual(response.status, FetchStatus.OK)
        self.assertEqual(len(response.payload), MiB)


class FileBackedLogTests(SimpleTestCase):
    def test_segments_and_index_on_disk(self):
        with tempfile.TemporaryDirectory() as directory:
            store = NodeStore('n', directory=directory, segment_bytes=10_000)
            locators = [store.append('cam', 1000 + ts, b'p' * 100) for ts in range(130)]
            self.assertEqual(store.read(locators[77]), b'p' * 100)
            names = sorted(os.listdir(os.path.join(directory, 'cam')))
            self.assertIn('seg-1000.log', names)
            self.assertIn('seg-1000.idx', names)
            with open(os.path.join(directory, 'cam', 'seg-1000.idx'), 'rb') as fh:
                first = INDEX_ENTRY.unpack(fh.read(INDEX_ENTRY.size))
            self.assertEqual(first, (1000, 0))
            store.close()

    def test_retired_segment_files_are_removed(self):
        with tempfile.TemporaryDirectory() as directory:
            store = NodeStore('n', directory=directory, retention_bytes=250, segment_bytes=150)
            first = store.append('cam', 0, b'a' * 100)
            for ts in range(1, 5):
                store.append('cam', ts, b'b' * 100)
            with self.assertRaises(Evicted):
                store.read(first)
            self.assertNotIn('seg-0.log', os.listdir(os.path.join(directory, 'cam')))
            store.close()


class FetchCacheTests(SimpleTestCase):
    def test_lru_by_bytes(self):
        cache = FetchCache(10)
        cache.put('a', b'1234')
        cache.put('b', b'1234')
        cache.get('a')
        cache.put('c', b'1234')
        self.assertIn('a', cache)
        self.assertNotIn('b', cache)
        self.assertEqual(cache.size, 8)

    def test_oversized_item_not_cached(self):
        cache = FetchCache(3)
        self.assertFalse(cache.put('a', b'1234'))
        self.assertEqual(len(cache), 0)


class FetchClientTests(SimpleTestCase):
    def setUp(self):
        self.store = NodeStore('node-a', 7000)
        self.client = FetchClient()

    def fetch(self, header, now=None, threshold=None):
        payload, request = self.client.prepare(header, now, threshold)
        if request is None:
            return payload
        return self.client.complete(request, self.store.serve(request, now or 0))

    def test_second_fetch_served_from_cache(self):
        locator = self.store.append('cam', 0, b'x' * 64)
        header = header_for(locator, 0)
        self.assertEqual(self.fetch(header), b'x' * 64)
        self.assertEqual(self.fetch(header), b'x' * 64)
        self.assertEqual(self.client.counters.requests, 1)
        self.assertEqual(self.client.counters.cache_hits, 1)
        self.assertEqual(self.client.counters.bytes_fetched, 64)

    def test_stale_rejected_moves_no_bytes(self):
        locator = self.store.append('cam', 0, b'x' * 64)
        with self.assertRaises(StaleRejected):
            self.fetch(header_for(locator, 0), now=ms(600), threshold=ms(500))
        self.assertEqual(self.client.counters.bytes_fetched, 0)
        self.assertEqual(self.store.bytes_served, 0)

    def test_cached_payload_past_threshold_is_stale(self):
        locator = self.store.append('cam', ms(400), b'x' * 100)
        header = header_for(locator, ms(400))
        self.assertEqual(self.fetch(header, now=ms(500), threshold=ms(500)), b'x' * 100)
        self.assertIn(locator, self.client.cache)
        with self.assertRaises(StaleRejected):
            self.fetch(header, now=ms(1000), threshold=ms(500))
        self.assertEqual(self.client.counters.cache_hits, 0)
        self.assertEqual(self.client.counters.stale_rejected, 1)
        self.assertEqual(self.fetch(header, now=ms(900), threshold=ms(500)), b'x' * 100)
        self.assertEqual(self.client.counters.cache_hits, 1)

    def test_skipping_fetches_proportional_bytes(self):
        headers = [header_for(self.store.append('cam', ts, bytes(1000)), ts) for ts in range(150)]
        kept = [h for index, h in enumerate(headers) if index % 5 not in (1, 3)]
        for header in kept:
            self.fetch(header)
        total = 150 * 1000
        self.assertAlmostEqual(self.client.counters.bytes_fetched, 0.6 * total, delta=1000)
        self.assertEqual(self.client.counters.bytes_fetched, sum(loc.length for loc in self.client.fetched))

    def test_evicted_is_reported(self):
        store = NodeStore('node-a', 7000, retention_bytes=10)
        first = store.append('cam', 0, bytes(8))
        store.append('cam', 1, bytes(8))
        payload, request = self.client.prepare(header_for(first, 0))
        with self.assertRaises(Evicted):
            self.client.complete(request, store.serve(request, 0))
        self.assertEqual(self.client.counters.failures, 1)


class LiveFetchTests(SimpleTestCase):
    def test_fetch_over_tcp_reuses_connection(self):
        async def scenario():
            store = NodeStore('127.0.0.1')
            server = await FetchServer(store).start()
            transport = AsyncFetchTransport()
            client = FetchClient(cache_bytes=0)
            try:
                headers = [header_for(store.append('cam', ts, bytes([ts]) * 32), ts) for ts in range(5)]
                payloads = [await client.fetch(h, transport) for h in headers]
                return payloads, transport.connections_opened, client.counters.bytes_fetched
            finally:
                await transport.close()
                await server.close()

        payloads, connections, fetched = asyncio.run(scenario())
        self.assertEqual(payloads, [bytes([ts]) * 32 for ts in range(5)])
        self.assertEqual(connections, 1)
        self.assertEqual(fetched, 160)
