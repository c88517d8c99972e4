import asyncio
import random

from django.test import SimpleTestCase

from core.exceptions import DuplicateConsumer, DuplicateTopic, FrameTooLarge, UnknownStream, UnknownTopic
from core.types import Header, PayloadLocator, TopicConfig

from .client import BrokerClient
from .queue import Delivery, GapNotice
from .server import BrokerServer
from .service import Broker


def lazy(stream, ts, topic='T'):
    return Header(topic, stream, ts, ts, locator=PayloadLocator('src', 7000, 0, ts, 1024))


def eager(stream, ts, size=16, topic='T'):
    return Header(topic, stream, ts, ts, inline=b'x' * size)


class Recorder:
    def __init__(self, accept=True):
        self.items = []
        self.accept = accept

    def __call__(self, item):
        if not self.accept:
            return False
        self.items.append(item)
        return True

    @property
    def sequences(self):
        return [item.sequence for item in self.items if isinstance(item, Delivery)]


class BrokerTestCase(SimpleTestCase):
    streams = ('A', 'B', 'C', 'D')

    def setUp(self):
        self.broker = Broker(retention=1000, shared_window=4)
        self.broker.create_topic(TopicConfig('T', self.streams))


class TopicTests(BrokerTestCase):
    def test_create_then_publish(self):
        self.assertEqual(self.broker.publish_header(lazy('A', 1)), 0)

    def test_duplicate_topic(self):
        with self.assertRaises(DuplicateTopic):
            self.broker.create_topic(TopicConfig('T', ('A',)))

    def test_unknown_topic(self):
        with self.assertRaises(UnknownTopic):
            self.broker.publish_header(lazy('A', 1, topic='nope'))
        with self.assertRaises(UnknownTopic):
            self.broker.subscribe('nope', 'c', False, Recorder())

    def test_unknown_stream(self):
        with self.assertRaises(UnknownStream):
            self.broker.publish_header(lazy('Z', 1))

    def test_sequence_numbers_are_monotone(self):
        self.assertEqual([self.broker.publish_header(lazy('A', t)) for t in range(3)], [0, 1, 2])

    def test_inline_payload_over_limit(self):
        broker = Broker(max_payload=100)
        broker.create_topic(TopicConfig('T', ('A',)))
        with self.assertRaises(FrameTooLarge):
            broker.publish_header(eager('A', 1, size=101))

    def test_publish_stamps_broker_time(self):
        sink = Recorder()
        self.broker.subscribe('T', 'c', False, sink)
        self.broker.publish_header(lazy('A', 10), now=25)
        self.assertEqual(sink.items[0].header.publish_ts, 25)


class ExclusiveDeliveryTests(BrokerTestCase):
    def test_ordered_delivery(self):
        sink = Recorder()
        self.broker.subscribe('T', 'c', False, sink)
        for ts in range(1, 5):
            self.broker.publish_header(lazy('A', ts))
        self.assertEqual([item.header.event_ts for item in sink.items], [1, 2, 3, 4])

    def test_fan_out_to_exclusive_subscribers(self):
        first, second = Recorder(), Recorder()
        self.broker.subscribe('T', 'one', False, first)
        self.broker.subscribe('T', 'two', False, second)
        for ts in range(10):
            self.broker.publish_header(lazy(self.streams[ts % 4], ts))
        self.assertEqual(first.sequences, list(range(10)))
        self.assertEqual([i.header for i in first.items], [i.header for i in second.items])

    def test_randomized_publishes_arrive_in_log_order(self):
        rng = random.Random(3)
        sink = Recorder()
        self.broker.subscribe('T', 'c', False, sink)
        published = []
        for _ in range(1000):
            header = lazy(rng.choice(self.streams), rng.randint(0, 10**6))
            published.append((self.broker.publish_header(header), header))
        self.assertEqual([(i.sequence, i.header) for i in sink.items], published)

    def test_duplicate_consumer(self):
        self.broker.subscribe('T', 'c', False, Recorder())
        with self.assertRaises(DuplicateConsumer):
            self.broker.subscribe('T', 'c', True, Recorder())

    def test_refused_delivery_waits_for_resume(self):
        sink = Recorder(accept=False)
        self.broker.subscribe('T', 'c', False, sink)
        self.broker.publish_header(lazy('A', 1))
        self.broker.publish_header(lazy('A', 2))
        self.assertEqual(sink.items, [])
        sink.accept = True
        self.broker.resume('T', 'c')
        self.assertEqual(sink.sequences, [0, 1])

    def test_gap_notice_past_retention(self):
        broker = Broker(retention=3)
        broker.create_topic(TopicConfig('T', ('A',)))
        sink = Recorder(accept=False)
        broker.subscribe('T', 'c', False, sink)
        for ts in range(5):
            broker.publish_header(lazy('A', ts))
        sink.accept = True
        broker.resume('T', 'c')
        self.assertEqual(sink.items[0], GapNotice('T', 0, 1))
        self.assertEqual(sink.sequences, [2, 3, 4])


class SharedDeliveryTests(BrokerTestCase):
    def test_partition_without_acks_respects_window(self):
        sinks = [Recorder() for _ in range(4)]
        for index, sink in enumerate(sinks):
            self.broker.subscribe('T', f'c{index}', True, sink)
        for ts in range(100):
            self.broker.publish_header(lazy('A', ts))
        # Four consumers with a window of four hold sixteen headers in flight.
        self.assertEqual(sum(len(s.items) for s in sinks), 16)

    def test_each_header_delivered_exactly_once(self):
        sinks = {f'c{i}': Recorder() for i in range(4)}
        for consumer_id, sink in sinks.items():
            self.broker.subscribe('T', consumer_id, True, sink)
        for ts in range(100):
            self.broker.publish_header(lazy('A', ts))
            for consumer_id, sink in sinks.items():
                for item in sink.items:
                    self.broker.ack('T', consumer_id, item.sequence)
        seen = sorted(seq for sink in sinks.values() for seq in sink.sequences)
        self.assertEqual(seen, list(range(100)))
        self.assertTrue(all(sink.items for sink in sinks.values()))

    def test_round_robin(self):
        sinks = [Recorder(), Recorder()]
        for index, sink in enumerate(sinks):
            self.broker.subscribe('T', f'c{index}', True, sink)
        for ts in range(4):
            self.broker.publish_header(lazy('A', ts))
        self.assertEqual(sinks[0].sequences, [0, 2])
        self.assertEqual(sinks[1].sequences, [1, 3])

    def test_disconnect_redelivers_in_flight(self):
        first, second = Recorder(), Recorder()
        self.broker.subscribe('T', 'one', True, first)
        self.broker.subscribe('T', 'two', True, second)
        for ts in range(4):
            self.broker.publish_header(lazy('A', ts))
        self.broker.ack('T', 'one', 0)
        self.broker.unsubscribe('T', 'one')
        self.assertEqual(second.sequences, [1, 3, 2])

    def test_exclusive_and_shared_coexist(self):
        watcher, worker = Recorder(), Recorder()
        self.broker.subscribe('T', 'watch', False, watcher)
        self.broker.subscribe('T', 'work', True, worker)
        for ts in range(3):
            self.broker.publish_header(lazy('A', ts))
        self.assertEqual(watcher.sequences, [0, 1, 2])
        self.assertEqual(worker.sequences, [0, 1, 2])


class ByteAccountingTests(BrokerTestCase):
    def test_lazy_routing_moves_no_payload_bytes(self):
        self.broker.subscribe('T', 'c', False, Recorder())
        for ts in range(50):
            self.broker.publish_header(lazy('B', ts))
        stats = self.broker.stats
        self.assertEqual(stats.payload_bytes_in, 0)
        self.assertEqual(stats.payload_bytes_out, 0)
        self.assertGreater(stats.frame_bytes_out, 0)
        self.assertEqual(stats.frame_bytes_out, stats.frame_bytes_in + 8 * 50)

    def test_eager_routing_counts_payload(self):
        self.broker.subscribe('T', 'c', False, Recorder())
        self.broker.publish_header(eager('B', 1, size=300))
        self.assertEqual(self.broker.stats.payload_bytes_in, 300)
        self.assertEqual(self.broker.stats.payload_bytes_out, 300)


class LiveBrokerTests(SimpleTestCase):
    def test_publish_and_subscribe_over_tcp(self):
        async def scenario():
            server = await BrokerServer(Broker(), port=0).start()
            serving = asyncio.create_task(server.serve_forever())
            try:
                admin = await BrokerClient.connect('127.0.0.1', server.port)
                await admin.create_topic(TopicConfig('T', ('A', 'B')))
                consumer = await BrokerClient.connect('127.0.0.1', server.port)
                config = await consumer.subscribe('T', 'model-1')
                sequences = [await admin.publish(eager('A', ts)) for ts in (1, 2, 3)]
                received = []
                async for delivery in consumer.deliveries():
                    received.append(delivery)
                    if len(received) == 3:
                        break
                with self.assertRaises(UnknownTopic):
                    await admin.publish(eager('A', 4, topic='missing'))
                with self.assertRaises(DuplicateTopic):
                    await admin.create_topic(TopicConfig('T', ('A',)))
                await admin.close()
                await consumer.close()
                return config, sequences, received
            finally:
                serving.cancel()
                await server.close()

        config, sequences, received = asyncio.run(scenario())
        self.assertEqual(config.streams, ('A', 'B'))
        self.assertEqual(sequences, [0, 1, 2])
        self.assertEqual([d.header.event_ts for d in received], [1, 2, 3])
        self.assertEqual([d.sequence for d in received], [0, 1, 2])
