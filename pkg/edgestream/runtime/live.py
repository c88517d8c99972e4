"""
Live-mode processes: a source publishing one stream and a model consuming a topic.

Both speak the wire protocol to the broker. Sources keep lazy payloads in
their own ``NodeStore`` behind a ``FetchServer``; models fetch them peer to
peer and publish predictions inline on the model's output stream.
"""
import asyncio
import logging

from core.exceptions import DuplicateTopic, EdgeStreamError
from core.timing import WallClock
from core.types import Header, TopicConfig
from broker.client import BrokerClient
from broker.queue import GapNotice
from metrics.events import EventKind
from store.fetch import AsyncFetchTransport, FetchClient

from .failsoft import FailSoftPolicy
from .pipeline import Pipeline

logger = logging.getLogger(__name__)


class SourceProcess:
    def __init__(self, client, topic, stream, log, store=None, clock=None):
        self.client = client
        self.topic = topic
        self.stream = stream
        self.log = log
        self.store = store
        self.clock = clock or WallClock()
        self.published = 0

    @property
    def lazy(self):
        return self.store is not None

    async def produce(self, payload, event_ts=None):
        now = self.clock.now()
        event_ts = now if event_ts is None else event_ts
        self.log.emit(EventKind.PRODUCE_BEGIN, self.topic, self.stream, event_ts, at=now,
                      size=len(payload), lazy=self.lazy)
        if self.lazy:
            header = Header(self.topic, self.stream, event_ts, max(now, event_ts),
                            locator=self.store.append(self.stream, event_ts, payload))
        else:
            header = Header(self.topic, self.stream, event_ts, max(now, event_ts), inline=payload)
        sequence = await self.client.publish(header)
        self.log.emit(EventKind.PRODUCE_END, self.topic, self.stream, event_ts, sequence)
        self.published += 1
        return sequence

    async def run(self, payloads, period, count=None):
        """Publish ``payloads()`` every ``period`` microseconds until cancelled or ``count`` is reached."""
        while count is None or self.published < count:
            await self.produce(payloads(self.published))
            await asyncio.sleep(period / 1_000_000)


class ModelProcess:
    def __init__(self, subscriber, publisher, model, log, consumer_id, shared=False,
                 policy=FailSoftPolicy.DROP_TUPLE, skip_fraction=0, clock=None,
                 fetch_client=None, transport=None, tick=10_000):
        self.subscriber = subscriber
        self.publisher = publisher
        self.model = model
        self.log = log
        self.consumer_id = consumer_id
        self.shared = shared
        self.policy = policy
        self.skip_fraction = skip_fraction
        self.clock = clock or WallClock()
        self.fetch_client = fetch_client or FetchClient()
        self.transport = transport or AsyncFetchTransport()
        self.tick = tick
        self.pipeline = None
        self.outputs = []
        self._wake = asyncio.Event()

    @classmethod
    async def connect(cls, host, port, model, log, consumer_id, **kwargs):
        subscriber = await BrokerClient.connect(host, port)
        publisher = await BrokerClient.connect(host, port)
        return cls(subscriber, publisher, model, log, consumer_id, **kwargs)

    async def start(self):
        config = await self.subscriber.subscribe(self.model.consumes, self.consumer_id, self.shared)
        try:
            await self.publisher.create_topic(TopicConfig(self.model.output_topic, (self.model.produces,)))
        except DuplicateTopic:
            pass
        self.pipeline = Pipeline(config, self.model, self.log, self.policy, self.skip_fraction, self.shared)
        self.pipeline.start(self.clock.now())
        return config

    async def _flush_acks(self):
        for sequence in self.pipeline.take_acks():
            if self.shared:
                await self.subscriber.ack(sequence)

    async def _intake(self):
        async for delivery in self.subscriber.deliveries():
            if isinstance(delivery, GapNotice):
                logger.warning('Missed %s sequences %d..%d', delivery.topic, delivery.from_sequence,
                               delivery.to_sequence)
                continue
            self.pipeline.deliver(delivery, self.clock.now())
            await self._flush_acks()
            self._wake.set()

    async def _ticker(self):
        while True:
            await asyncio.sleep(self.tick / 1_000_000)
            self.pipeline.tick(self.clock.now())
            await self._flush_acks()
            self._wake.set()

    async def _work(self):
        while True:
            work = self.pipeline.take()
            if work is None:
                self._wake.clear()
                await self._wake.wait()
                continue
            await self.process(work)
            await self._flush_acks()

    async def process(self, work):
        pipeline = self.pipeline
        threshold = pipeline.config.freshness_threshold
        for index, header in work.fetches():
            pipeline.fetch_started(work, index, self.clock.now())
            try:
                hits = self.fetch_client.counters.cache_hits
                payload = await self.fetch_client.fetch(header, self.transport, self.clock.now(), threshold)
            except EdgeStreamError as exc:
                pipeline.fetch_finished(work, index, self.clock.now(), error=exc)
            else:
                cached = self.fetch_client.counters.cache_hits > hits
                pipeline.fetch_finished(work, index, self.clock.now(), payload=payload, cached=cached)
        if pipeline.assemble(work, self.clock.now()) is None:
            return None
        if not pipeline.run_model(work, self.clock.now()):
            return None
        if self.model.declared_cost:
            await asyncio.sleep(self.model.declared_cost / 1_000_000)
        prediction = pipeline.finish(work, self.clock.now())
        header = pipeline.output_header(prediction, inline=prediction.payload(self.model.output_size))
        pipeline.published(work, header, prediction, self.clock.now())
        sequence = await self.publisher.publish(header)
        self.log.item(EventKind.PRODUCE_END, header, seq=sequence, at=self.clock.now())
        self.outputs.append(prediction)
        return prediction

    async def run(self, stop=None):
        """Run until ``stop`` is set or the broker closes the subscription."""
        if self.pipeline is None:
            await self.start()
        tasks = [asyncio.create_task(self._intake()), asyncio.create_task(self._ticker()),
                 asyncio.create_task(self._work())]
        watched = list(tasks)
        if stop is not None:
            watched.append(asyncio.create_task(stop.wait()))
        try:
            done, _ = await asyncio.wait(watched, return_when=asyncio.FIRST_COMPLETED)
            for task in done:
                if task in tasks and task.exception() is not None:
                    raise task.exception()
        finally:
            for task in watched:
                task.cancel()
            await asyncio.gather(*watched, return_exceptions=True)
        return self.outputs

    async def close(self):
        if self.pipeline is not None:
            self.pipeline.stop(self.clock.now(), rebalanced=self.shared)
        await self.transport.close()
        await self.subscriber.close()
        await self.publisher.close()
        self.log.shutdown()
