"""
Discrete-event run of a scenario.

One ``simpy.Environment`` drives everything in integer microseconds. The
broker, joiners and pipelines are the same objects live mode uses; only
the transport differs: every publish, delivery and fetch becomes a simpy
process that moves its frame across the ``StarNetwork``.
"""
import logging
import random
from dataclasses import dataclass, field

import simpy

from broker.queue import GapNotice
from broker.service import Broker
from core.exceptions import InvalidTopology, StoreError
from core.types import Header, JoinMode, TopicConfig
from metrics.events import EventKind, LogSet
from metrics.report import report
from runtime.failsoft import FailSoftPolicy
from runtime.operators import build_model
from runtime.pipeline import Pipeline
from store.fetch import FetchClient, FetchCounters
from store.log import NodeStore
from wire.codec import frame_size
from wire.messages import PublishHeader

from .generators import Schedule, item_value, label_timeline, make_payload
from .network import StarNetwork
from .scenario import EAGER, EARLY_FUSION, EARLY_FUSION_PARALLEL, LATE_FUSION

logger = logging.getLogger(__name__)

DRAIN_STEP = 100_000


class SimulationClock:
    """Clock protocol over the simulator's virtual time."""

    def __init__(self, env):
        self.env = env

    def now(self):
        return int(self.env.now)


@dataclass
class SimResult:
    scenario: object
    seed: int
    events: list
    report: object
    timeline: list = None
    broker_stats: dict = field(default_factory=dict)
    fetch: FetchCounters = None
    ledger: list = field(default_factory=list, repr=False)
    end: int = 0


class SimSource:
    def __init__(self, sim, schedule):
        self.sim = sim
        self.spec = schedule.spec
        self.schedule = schedule
        self.log = sim.logs[self.spec.node]
        routing = self.spec.routing or sim.scenario.routing
        self.lazy = routing != EAGER
        self.store = sim.store(self.spec.node) if self.lazy else None

    def run(self):
        env = self.sim.env
        spec = self.spec
        for index, (event_ts, size) in enumerate(self.schedule.items):
            produce_at = event_ts + spec.delay
            if produce_at > env.now:
                yield env.timeout(produce_at - env.now)
            now = self.sim.clock.now()
            payload = make_payload(item_value(spec, index, event_ts, self.sim.timeline), size)
            self.log.emit(EventKind.PRODUCE_BEGIN, spec.topic, spec.stream, event_ts, at=now,
                          size=size, lazy=self.lazy)
            if self.lazy:
                header = Header(spec.topic, spec.stream, event_ts, now,
                                locator=self.store.append(spec.stream, event_ts, payload))
            else:
                header = Header(spec.topic, spec.stream, event_ts, now, inline=payload)
            self.sim.spawn(self.sim.publish(spec.node, header, self.log))


class SimModel:
    """One instance of a model on one node: pipeline, fetch client and worker."""

    def __init__(self, sim, spec, node, config):
        self.sim = sim
        self.spec = spec
        self.node = node
        self.log = sim.logs[node]
        self.consumer_id = f'{spec.id}@{node}'
        self.operator = build_model(spec.model, spec.id, spec.consumes, spec.produces, spec.cost,
                                    spec.output, spec.params, spec.output_size)
        self.cost = int(round(spec.cost * sim.scenario.cost_multiplier(node)))
        self.pipeline = Pipeline(config, self.operator, self.log, FailSoftPolicy(spec.policy),
                                 spec.skip_fraction, spec.shared)
        self.fetch_client = FetchClient(sim.scenario.cache_bytes)
        self.wake = None

    def start(self):
        env = self.sim.env
        self.pipeline.start(self.sim.clock.now())
        self.sim.broker.subscribe(self.spec.consumes, self.consumer_id, self.spec.shared, self.sink)
        env.process(self.work())
        if self.pipeline.config.effective_mode() == JoinMode.TIME_TRIGGERED:
            env.process(self.ticker())

    def sink(self, item):
        self.sim.spawn(self.receive(item))
        return True

    def receive(self, item):
        if isinstance(item, GapNotice):
            logger.warning('%s missed %s sequences %d..%d', self.consumer_id, item.topic,
                           item.from_sequence, item.to_sequence)
            return
        yield from self.sim.network.transfer(self.sim.scenario.leader, self.node, item.frame_bytes)
        self.pipeline.deliver(item, self.sim.clock.now())
        self.flush_acks()
        self.notify()

    def ticker(self):
        env = self.sim.env
        window = self.pipeline.config.window
        while env.now < self.sim.tick_horizon:
            yield env.timeout(window - env.now % window)
            self.pipeline.tick(self.sim.clock.now())
            self.flush_acks()
            self.notify()

    def notify(self):
        if self.wake is not None and not self.wake.triggered:
            self.wake.succeed()

    def flush_acks(self):
        for sequence in self.pipeline.take_acks():
            if self.spec.shared:
                self.sim.broker.ack(self.spec.consumes, self.consumer_id, sequence)

    def busy(self):
        return not self.pipeline.idle

    def work(self):
        env = self.sim.env
        clock = self.sim.clock
        pipeline = self.pipeline
        while True:
            work = pipeline.take()
            if work is None:
                self.wake = env.event()
                yield self.wake
                continue
            yield from self.fetch_all(work)
            if pipeline.assemble(work, clock.now()) is None or not pipeline.run_model(work, clock.now()):
                self.flush_acks()
                continue
            if self.cost:
                yield env.timeout(self.cost)
            prediction = pipeline.finish(work, clock.now())
            self.flush_acks()
            header = pipeline.output_header(prediction, inline=prediction.payload(self.operator.output_size))
            pipeline.published(work, header, prediction, clock.now())
            self.sim.spawn(self.sim.publish(self.node, header, self.log))

    def fetch_all(self, work):
        clock = self.sim.clock
        pipeline = self.pipeline
        threshold = pipeline.config.freshness_threshold
        for index, header in work.fetches():
            pipeline.fetch_started(work, index, clock.now())
            try:
                payload, request = self.fetch_client.prepare(header, clock.now(), threshold)
            except StoreError as exc:
                pipeline.fetch_finished(work, index, clock.now(), error=exc)
                continue
            if request is None:
                pipeline.fetch_finished(work, index, clock.now(), payload=payload, cached=True)
                continue
            owner = header.locator.host
            network = self.sim.network
            yield from network.transfer(self.node, owner, frame_size(request), p2p=True)
            response = self.sim.store(owner).serve(request, clock.now())
            yield from network.transfer(owner, self.node, frame_size(response))
            try:
                payload = self.fetch_client.complete(request, response)
            except StoreError as exc:
                pipeline.fetch_finished(work, index, clock.now(), error=exc)
            else:
                pipeline.fetch_finished(work, index, clock.now(), payload=payload)


class Simulation:
    def __init__(self, scenario, seed=None, log_dir=None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.env = simpy.Environment()
        self.clock = SimulationClock(self.env)
        self.logs = LogSet(self.clock, log_dir)
        self.network = StarNetwork(self.env, scenario.links, scenario.default_link, scenario.p2p_setup,
                                   scenario.p2p_setup_per_fetch)
        self.broker = Broker(scenario.retention, scenario.shared_window)
        self.stores = {}
        self.outstanding = 0
        self.timeline = None
        if scenario.labels is not None:
            labels = scenario.labels
            self.timeline = label_timeline(random.Random(f'{self.seed}:labels'), scenario.duration,
                                           labels.classes, labels.min_segment, labels.max_segment)
        self.check_topology()
        self.sources = [
            SimSource(self, Schedule.build(spec, scenario.duration, self.seed)) for spec in scenario.streams
        ]
        for config in scenario.topics:
            self.broker.create_topic(config)
        for spec in scenario.models:
            if spec.output not in self.broker.topics:
                self.broker.create_topic(TopicConfig(spec.output, (spec.produces,)))
        self.models = [
            SimModel(self, spec, node, scenario.topic(spec.consumes))
            for spec in scenario.models for node in spec.nodes
        ]
        longest_delay = max((spec.delay for spec in scenario.streams), default=0)
        longest_window = max((config.window or 0 for config in scenario.topics), default=0)
        self.tick_horizon = scenario.duration + longest_delay + longest_window

    def check_topology(self):
        scenario = self.scenario
        topics = {config.topic: config for config in scenario.topics}
        outputs = {spec.output: spec for spec in scenario.models}
        for spec in scenario.streams:
            config = topics.get(spec.topic)
            if config is None:
                raise InvalidTopology(f'stream {spec.stream!r} publishes to undeclared topic {spec.topic!r}')
            if spec.stream not in config.streams:
                raise InvalidTopology(f'topic {spec.topic!r} has no stream {spec.stream!r}')
        consumers = set()
        for spec in scenario.models:
            if spec.consumes not in topics:
                raise InvalidTopology(f'model {spec.id!r} consumes undeclared topic {spec.consumes!r}')
            if spec.output in topics and spec.produces not in topics[spec.output].streams:
                raise InvalidTopology(f'topic {spec.output!r} has no stream {spec.produces!r} for model {spec.id!r}')
            for node in spec.nodes:
                if (node, spec.consumes) in consumers:
                    raise InvalidTopology(f'node {node!r} runs two pipelines on {spec.consumes!r}')
                consumers.add((node, spec.consumes))
        chained = [spec for spec in scenario.models if spec.consumes in outputs]
        if scenario.topology == LATE_FUSION and not chained:
            raise InvalidTopology('late_fusion needs a model consuming other models\' predictions')
        if scenario.topology == EARLY_FUSION:
            if chained:
                raise InvalidTopology('early_fusion models consume raw streams only')
            if any(len(spec.nodes) > 1 for spec in scenario.models):
                raise InvalidTopology('early_fusion runs one instance per model; use early_fusion_parallel')
        if scenario.topology == EARLY_FUSION_PARALLEL and not any(spec.shared for spec in scenario.models):
            raise InvalidTopology('early_fusion_parallel needs a shared model')
        nodes = {scenario.leader}
        nodes.update(spec.node for spec in scenario.streams)
        nodes.update(node for spec in scenario.models for node in spec.nodes)
        for node in sorted(nodes):
            self.network.check(node)

    def store(self, node):
        if node not in self.stores:
            self.stores[node] = NodeStore(node, 0)
        return self.stores[node]

    def spawn(self, generator):
        self.outstanding += 1
        return self.env.process(self._tracked(generator))

    def _tracked(self, generator):
        try:
            yield from generator
        finally:
            self.outstanding -= 1

    def publish(self, node, header, log):
        """Carry a PublishHeader to the leader, append it, and log produce_end."""
        yield from self.network.transfer(node, self.scenario.leader, frame_size(PublishHeader(header)))
        sequence = self.broker.publish_header(header)
        log.item(EventKind.PRODUCE_END, header, seq=sequence, at=self.clock.now())

    def busy(self):
        return self.outstanding > 0 or any(model.busy() for model in self.models)

    def run(self):
        scenario = self.scenario
        logger.info('Simulating %s (seed %d, %s topology)', scenario.name, self.seed, scenario.topology)
        for model in self.models:
            model.start()
        for source in self.sources:
            self.env.process(source.run())
        self.env.run(until=self.tick_horizon + 1)
        deadline = self.env.now + scenario.max_drain
        while self.busy():
            if self.env.now >= deadline:
                logger.warning('%s still busy %d us after its last item; stopping', scenario.name, scenario.max_drain)
                break
            self.env.run(until=self.env.now + DRAIN_STEP)
        end = self.clock.now()
        for model in self.models:
            model.pipeline.stop(end, rebalanced=False)
        self.logs.shutdown()
        events = self.logs.events()
        labels = scenario.labels
        accuracy_topic = labels.accuracy_topic if labels else None
        result = SimResult(
            scenario=scenario,
            seed=self.seed,
            events=events,
            report=report(events, self.timeline, accuracy_topic),
            timeline=self.timeline,
            broker_stats=self.broker.stats.as_dict(),
            fetch=self.fetch_counters(),
            ledger=self.network.ledger,
            end=end,
        )
        logger.info('%s finished at %d us with %d events', scenario.name, end, len(events))
        return result

    def fetch_counters(self):
        total = FetchCounters()
        for model in self.models:
            for name, value in model.fetch_client.counters.__dict__.items():
                setattr(total, name, getattr(total, name) + value)
        return total


def run_scenario(scenario, seed=None, log_dir=None):
    return Simulation(scenario, seed, log_dir).run()

