import asyncio
import random
from itertools import permutations

from django.test import SimpleTestCase

from broker.client import BrokerClient
from broker.queue import Delivery
from broker.server import BrokerServer
from broker.service import Broker
from core.exceptions import ConfigError, ContractViolation, Evicted, ModelError
from core.timing import ManualClock
from core.types import Header, JoinMode, JoinTuple, Slot, TopicConfig, ms
from join.joiners import DataTriggeredJoiner
from metrics.events import EventKind, EventLog
from store.fetch import FetchServer
from store.log import NodeStore

from .failsoft import FailSoftPolicy, fail_soft_impute
from .live import ModelProcess, SourceProcess
from .operators import Prediction, build_model, decode_value, encode_value, majority_vote
from .pipeline import Pipeline, Sampler

STREAMS = ('A', 'B', 'C', 'D')
SCHEDULE = [
    ('A1', 1), ('B1', 2), ('C1', 3), ('D1', 4), ('B2', 6), ('D2', 8), ('B3', 11), ('C2', 13), ('A2', 16),
]


def value_header(stream, ts, value, topic='T', now=None):
    return Header(topic, stream, ts, ts if now is None else now, inline=encode_value(value))


def make_pipeline(model='sum', streams=STREAMS, mode=JoinMode.DATA_TRIGGERED, policy=FailSoftPolicy.DROP_TUPLE,
                  skip_fraction=0, params=None, **kwargs):
    config = TopicConfig('T', streams, mode, **kwargs)
    operator = build_model(model, 'm', 'T', 'out', params=params)
    log = EventLog('consumer', ManualClock())
    pipeline = Pipeline(config, operator, log, policy, skip_fraction)
    pipeline.start(0)
    return pipeline


def drain(pipeline, now, fetched=None):
    """Run every queued tuple to completion at ``now``; lazy slots are served from ``fetched``."""
    predictions = []
    while (work := pipeline.take()) is not None:
        for index, header in work.fetches():
            pipeline.fetch_started(work, index, now)
            outcome = fetched(header) if fetched else None
            if isinstance(outcome, Exception):
                pipeline.fetch_finished(work, index, now, error=outcome)
            else:
                pipeline.fetch_finished(work, index, now, payload=outcome)
        if pipeline.assemble(work, now) is None:
            continue
        if not pipeline.run_model(work, now):
            continue
        prediction = pipeline.finish(work, now)
        header = pipeline.output_header(prediction, inline=prediction.payload())
        pipeline.published(work, header, prediction, now)
        predictions.append(prediction)
    return predictions


def run(pipeline, arrivals, fetched=None):
    predictions = []
    for sequence, (header, now) in enumerate(arrivals):
        pipeline.deliver(Delivery(header.topic, sequence, header, 0), now)
        predictions.extend(drain(pipeline, now, fetched))
    return predictions


def skips(pipeline, reason=None):
    return [
        event for event in pipeline.log.events
        if event.kind == EventKind.SKIP and (reason is None or event.reason == reason)
    ]


class OperatorTests(SimpleTestCase):
    def test_values_round_trip_with_padding(self):
        payload = encode_value(-42, size=32)
        self.assertEqual(len(payload), 32)
        self.assertEqual(decode_value(payload), -42)

    def test_value_out_of_range(self):
        with self.assertRaises(ModelError):
            encode_value(2 ** 63)

    def test_short_payload_carries_no_value(self):
        with self.assertRaises(ModelError):
            decode_value(b'\x01')

    def test_prediction_cannot_precede_trigger(self):
        with self.assertRaises(ContractViolation):
            Prediction(1, 'm', input_trigger_ts=10, emit_ts=9)

    def test_unknown_model(self):
        with self.assertRaisesMessage(ConfigError, 'unknown model'):
            build_model('resnet', 'm', 'T', 'out')

    def test_default_output_topic(self):
        self.assertEqual(build_model('identity', 'm', 'cam', 'out').output_topic, 'cam.predictions')

    def test_negative_cost(self):
        with self.assertRaises(ConfigError):
            build_model('identity', 'm', 'T', 'out', cost=-1)

    def test_diagonal_table(self):
        model = build_model('table_lookup', 'm', 'T', 'out', params={'diagonal_labels': [1, 2], 'width': 2})
        lookup = model.apply
        self.assertEqual(lookup([encode_value(2), encode_value(2)]), 2)
        self.assertEqual(lookup([encode_value(1), encode_value(2)]), -1)

    def test_threshold_label(self):
        model = build_model('threshold_label', 'm', 'T', 'out', params={'threshold': 5})
        self.assertEqual(model.apply([encode_value(3), encode_value(3)]), 1)
        self.assertEqual(model.apply([encode_value(2), encode_value(3)]), 0)


class MajorityVoteTests(SimpleTestCase):
    def test_clear_majority(self):
        self.assertEqual(majority_vote([1, 1, 2, 1]), 1)

    def test_tie_goes_to_first_slot(self):
        self.assertEqual(majority_vote([1, 2, 1, 2]), 1)
        self.assertEqual(majority_vote([2, 1, 1, 2]), 2)

    def test_unanimity(self):
        self.assertEqual(majority_vote([7, 7, 7, 7]), 7)

    def test_abstentions_are_ignored(self):
        self.assertEqual(majority_vote([None, 2, 2, 1]), 2)

    def test_empty_ballot(self):
        with self.assertRaises(ModelError):
            majority_vote([None, None])

    def test_strict_majority_survives_permutation(self):
        rng = random.Random(3)
        for _ in range(200):
            winner = rng.randrange(5)
            ballot = [winner] * 3 + [rng.randrange(5) for _ in range(2)]
            if ballot.count(winner) <= len(ballot) // 2:
                continue
            for order in permutations(ballot):
                self.assertEqual(majority_vote(list(order)), winner)

    def test_non_label_payload(self):
        model = build_model('majority_vote', 'm', 'T', 'out')
        with self.assertRaises(ModelError):
            model.apply([b'x', encode_value(1)])


class SamplerTests(SimpleTestCase):
    def test_skips_evenly(self):
        sampler = Sampler(0.25)
        decisions = [sampler.skip() for _ in range(100)]
        self.assertEqual(sum(decisions), 25)
        self.assertEqual([k for k, skipped in enumerate(decisions) if skipped][:3], [3, 7, 11])

    def test_zero_skips_nothing(self):
        sampler = Sampler(0)
        self.assertFalse(any(sampler.skip() for _ in range(50)))

    def test_fraction_range(self):
        with self.assertRaises(ConfigError):
            Sampler(1)


class PipelineTests(SimpleTestCase):
    def test_identity_over_single_stream(self):
        pipeline = make_pipeline('identity', streams=('A',))
        payloads = [bytes([i]) * 4 for i in range(20)]
        arrivals = [(Header('T', 'A', i, i, inline=p), i) for i, p in enumerate(payloads)]
        self.assertEqual([p.value for p in run(pipeline, arrivals)], payloads)

    def test_sum_over_walk_through(self):
        pipeline = make_pipeline('sum')
        arrivals = [(value_header(name[0], ts, value), ts) for value, (name, ts) in enumerate(SCHEDULE, start=1)]
        predictions = run(pipeline, arrivals)
        self.assertEqual([p.value for p in predictions], [10, 13, 15, 17, 22, 30])
        self.assertEqual([p.input_trigger_ts for p in predictions], [4, 6, 8, 11, 13, 16])

    def test_prediction_lineage(self):
        pipeline = make_pipeline('sum')
        run(pipeline, [(value_header(name[0], ts, 1), ts) for name, ts in SCHEDULE])
        published = [e for e in pipeline.log.events if e.kind == EventKind.PREDICT_PUBLISH]
        self.assertEqual(published[0].extra['origin'], ['T', 'D', 4])
        self.assertEqual(published[0].topic, 'T.predictions')
        self.assertEqual(published[0].extra['value'], 4)

    def test_freshness_stall_skips_stalled_tuples(self):
        threshold = ms(500)
        pipeline = make_pipeline('sum', streams=('A', 'B'), freshness_threshold=threshold)
        oracle = DataTriggeredJoiner(TopicConfig('T', ('A', 'B')))
        arrivals = []
        for k in range(60):
            for stream, offset in (('A', 0), ('B', ms(50))):
                ts = k * ms(100) + offset
                now = ts + ms(2)
                if ms(2000) <= ts < ms(4000):
                    now = ms(4000) + ms(2)
                arrivals.append((value_header(stream, ts, 1), now))
        arrivals.sort(key=lambda pair: (pair[1], pair[0].event_ts))
        expected_stale = 0
        for header, now in arrivals:
            joined = oracle.on_arrival(header, now)
            if joined is not None and any(now - s.header.event_ts > threshold for s in joined.slots):
                expected_stale += 1
        predictions = run(pipeline, arrivals)
        stale_tuples = {event.seq for event in skips(pipeline, 'stale')}
        self.assertGreater(expected_stale, 0)
        self.assertEqual(len(stale_tuples), expected_stale)
        self.assertEqual(len(predictions) + expected_stale, pipeline.next_seq)
        for prediction in predictions:
            self.assertFalse(ms(2000) <= prediction.input_trigger_ts < ms(3500))

    def test_skew_filter_drops_tuple(self):
        pipeline = make_pipeline('sum', streams=('A', 'B'), max_skew=2)
        predictions = run(pipeline, [(value_header('A', 1, 1), 1), (value_header('B', 10, 1), 10)])
        self.assertEqual(predictions, [])
        self.assertEqual({e.stream for e in skips(pipeline, 'skew')}, {'A', 'B'})

    def test_abstain_expires_slow_slot(self):
        pipeline = make_pipeline('majority_vote', streams=('A', 'B', 'C'), max_skew=5, policy=FailSoftPolicy.ABSTAIN)
        arrivals = [(value_header('A', 1, 9), 1), (value_header('B', 20, 2), 20), (value_header('C', 21, 2), 21)]
        (prediction,) = run(pipeline, arrivals)
        self.assertEqual(prediction.value, 2)
        begin = next(e for e in pipeline.log.events if e.kind == EventKind.MODEL_BEGIN)
        self.assertEqual(begin.extra['excluded'], [['A', 1]])

    def test_model_error_drops_tuple_and_continues(self):
        pipeline = make_pipeline('sum', streams=('A',))
        arrivals = [(Header('T', 'A', 1, 1, inline=b'x'), 1), (value_header('A', 2, 5), 2)]
        predictions = run(pipeline, arrivals)
        self.assertEqual([p.value for p in predictions], [5])
        self.assertEqual(len(skips(pipeline, 'model_error')), 1)

    def test_sampled_out_items_never_reach_the_joiner(self):
        pipeline = make_pipeline('identity', streams=('A',), skip_fraction=0.5)
        arrivals = [(Header('T', 'A', i, i, inline=bytes([i])), i) for i in range(10)]
        predictions = run(pipeline, arrivals)
        self.assertEqual(len(predictions), 5)
        self.assertEqual(len(skips(pipeline, 'sampled_out')), 5)
        self.assertEqual(pipeline.next_seq, 5)

    def test_hybrid_keeps_latest_tuple_only(self):
        pipeline = make_pipeline('identity', streams=('A',), mode=JoinMode.HYBRID, min_interval=0)
        for i in range(3):
            header = Header('T', 'A', i, i, inline=bytes([i]))
            pipeline.deliver(Delivery('T', i, header, 0), i)
        self.assertEqual(len(pipeline.pending), 1)
        self.assertEqual([e.event_ts for e in skips(pipeline, 'superseded_by_hybrid')], [0, 1])
        (prediction,) = drain(pipeline, 3)
        self.assertEqual(prediction.value, bytes([2]))
        self.assertEqual(sorted(pipeline.take_acks()), [0, 1, 2])

    def test_one_invocation_in_flight(self):
        pipeline = make_pipeline('identity', streams=('A',))
        for i in range(2):
            pipeline.deliver(Delivery('T', i, Header('T', 'A', i, i, inline=b'v'), 0), i)
        first = pipeline.take()
        self.assertIsNotNone(first)
        self.assertIsNone(pipeline.take())

    def test_warmup_items_are_acked_on_arrival(self):
        pipeline = make_pipeline('sum', streams=('A', 'B'))
        pipeline.deliver(Delivery('T', 0, value_header('A', 1, 1), 0), 1)
        self.assertEqual(pipeline.take_acks(), [0])
        pipeline.deliver(Delivery('T', 1, value_header('B', 2, 1), 0), 2)
        self.assertEqual(pipeline.take_acks(), [])
        drain(pipeline, 2)
        self.assertEqual(pipeline.take_acks(), [1])

    def test_stop_accounts_for_pending_work(self):
        pipeline = make_pipeline('identity', streams=('A',))
        for i in range(3):
            pipeline.deliver(Delivery('T', i, Header('T', 'A', i, i, inline=b'v'), 0), i)
        pipeline.stop(5)
        self.assertEqual([e.event_ts for e in skips(pipeline, 'unprocessed')], [0, 1, 2])
        self.assertTrue(pipeline.idle)

    def test_time_triggered_pipeline_ticks(self):
        pipeline = make_pipeline('sum', mode=JoinMode.TIME_TRIGGERED, window=5)
        arrivals = [(value_header(name[0], ts, value), ts) for value, (name, ts) in enumerate(SCHEDULE, start=1)]
        predictions = run(pipeline, arrivals)
        pipeline.tick(20)
        predictions.extend(drain(pipeline, 20))
        self.assertEqual([p.value for p in predictions], [10, 15, 22, 30])

    def test_model_must_consume_topic(self):
        config = TopicConfig('T', ('A',))
        with self.assertRaises(ConfigError):
            Pipeline(config, build_model('identity', 'm', 'other', 'out'), EventLog('n', ManualClock()))


class FailSoftTests(SimpleTestCase):
    def setUp(self):
        self.headers = [
            Header('T', s, 1, 1, locator=None, inline=encode_value(i)) for i, s in enumerate(('A', 'B'), 1)
        ]
        self.joined = JoinTuple('T', tuple(Slot(h, h.inline) for h in self.headers), 'B', 1, 1)

    def test_last_known_good_substitutes(self):
        repaired = fail_soft_impute(self.joined, {0}, FailSoftPolicy.LAST_KNOWN_GOOD, {'A': b'prior'})
        self.assertEqual(repaired.slots[0].payload, b'prior')
        self.assertTrue(repaired.slots[0].substituted)
        self.assertFalse(repaired.slots[1].substituted)

    def test_drop_tuple(self):
        self.assertIsNone(fail_soft_impute(self.joined, {0}, FailSoftPolicy.DROP_TUPLE, {'A': b'prior'}))

    def test_first_failure_without_prior_value_drops(self):
        self.assertIsNone(fail_soft_impute(self.joined, {0}, FailSoftPolicy.LAST_KNOWN_GOOD, {}))

    def test_every_slot_failed_drops(self):
        self.assertIsNone(fail_soft_impute(self.joined, {0, 1}, FailSoftPolicy.ABSTAIN, {}))

    def test_abstain_marks_missing(self):
        repaired = fail_soft_impute(self.joined, {1}, FailSoftPolicy.ABSTAIN, {})
        self.assertTrue(repaired.slots[1].missing)
        self.assertIsNone(repaired.slots[1].payload)

    def _lazy_pipeline(self, policy):
        self.store = NodeStore('src', 1)
        pipeline = make_pipeline('sum', streams=('A', 'B'), policy=policy)
        arrivals = []
        for stream, ts, value in (('A', 10, 1), ('B', 11, 10), ('A', 20, 2), ('B', 21, 20)):
            locator = self.store.append(stream, ts, encode_value(value))
            arrivals.append((Header('T', stream, ts, ts, locator=locator), ts))
        return pipeline, arrivals

    def _fetch_failing_after(self, count):
        calls = []

        def fetched(header):
            calls.append(header)
            if len(calls) > count and header.stream == 'A':
                return Evicted('gone')
            return self.store.read(header.locator)
        return fetched

    def test_pipeline_substitutes_evicted_slot(self):
        pipeline, arrivals = self._lazy_pipeline(FailSoftPolicy.LAST_KNOWN_GOOD)
        predictions = run(pipeline, arrivals, self._fetch_failing_after(2))
        # A fails from the second tuple on and its last good value 1 stands in.
        self.assertEqual([p.value for p in predictions], [11, 11, 21])
        self.assertEqual(pipeline.fail_soft.substitutions, 2)

    def test_pipeline_drops_on_failed_fetch(self):
        pipeline, arrivals = self._lazy_pipeline(FailSoftPolicy.DROP_TUPLE)
        predictions = run(pipeline, arrivals, self._fetch_failing_after(2))
        self.assertEqual([p.value for p in predictions], [11])
        self.assertTrue(skips(pipeline, 'failed_fetch'))

    def test_pipeline_first_failure_is_dropped(self):
        pipeline, arrivals = self._lazy_pipeline(FailSoftPolicy.LAST_KNOWN_GOOD)
        predictions = run(pipeline, arrivals, self._fetch_failing_after(0))
        self.assertEqual(predictions, [])


class EquivalenceTests(SimpleTestCase):
    def random_arrivals(self, rng, streams, count):
        clock = 0
        arrivals = []
        for _ in range(count):
            clock += rng.randint(0, 5)
            stream = rng.choice(streams)
            arrivals.append((stream, clock, rng.randint(-100, 100)))
        return arrivals

    def test_centralized_and_pipeline_agree(self):
        rng = random.Random(11)
        for _ in range(50):
            streams = STREAMS[:rng.randint(1, 4)]
            arrivals = self.random_arrivals(rng, streams, 60)
            joiner = DataTriggeredJoiner(TopicConfig('T', streams))
            model = build_model('sum', 'm', 'T', 'out')
            expected = []
            for stream, ts, value in arrivals:
                joined = joiner.on_arrival(value_header(stream, ts, value), ts)
                if joined is not None:
                    expected.append(model.apply([slot.header.inline for slot in joined.slots]))
            pipeline = make_pipeline('sum', streams=streams)
            got = run(pipeline, [(value_header(s, ts, v), ts) for s, ts, v in arrivals])
            self.assertEqual([p.value for p in got], expected)

    def test_lazy_and_inline_agree(self):
        rng = random.Random(12)
        for _ in range(20):
            arrivals = self.random_arrivals(rng, ('A', 'B'), 40)
            store = NodeStore('src', 1)
            inline, lazy = [], []
            for stream, ts, value in arrivals:
                inline.append((value_header(stream, ts, value), ts))
                locator = store.append(stream, ts, encode_value(value))
                lazy.append((Header('T', stream, ts, ts, locator=locator), ts))
            eager = run(make_pipeline('sum', streams=('A', 'B')), inline)
            fetched = run(make_pipeline('sum', streams=('A', 'B')), lazy, lambda h: store.read(h.locator))
            self.assertEqual([p.value for p in eager], [p.value for p in fetched])


class LateFusionTests(SimpleTestCase):
    def test_predictions_feed_an_ensemble(self):
        clock = ManualClock()
        log = EventLog('edge', clock)
        locals_ = []
        for i, stream in enumerate(STREAMS):
            config = TopicConfig(f'cam{i}', (stream,))
            model = build_model('threshold_label', f'local{i}', f'cam{i}', f'vote{i}', output_topic='ensemble',
                                params={'threshold': 0})
            locals_.append(Pipeline(config, model, log))
        ensemble_config = TopicConfig('ensemble', tuple(f'vote{i}' for i in range(4)))
        ensemble = Pipeline(ensemble_config, build_model('majority_vote', 'vote', 'ensemble', 'label'), log)
        readings = [(1, 1, -1, 1), (-1, -1, 1, -1)]
        results = []
        sequence = 0
        for step, row in enumerate(readings):
            for i, value in enumerate(row):
                now = step * 100 + i
                header = Header(f'cam{i}', STREAMS[i], now, now, inline=encode_value(value))
                locals_[i].deliver(Delivery(header.topic, step, header, 0), now)
                work = locals_[i].take()
                locals_[i].assemble(work, now)
                locals_[i].run_model(work, now)
                prediction = locals_[i].finish(work, now)
                out = locals_[i].output_header(prediction, inline=prediction.payload())
                ensemble.deliver(Delivery('ensemble', sequence, out, 0), now)
                sequence += 1
                results.extend(drain(ensemble, now))
        self.assertEqual([p.value for p in results], [1, 0, 0, 0, 0])


class LiveProcessTests(SimpleTestCase):
    def test_source_and_identity_model_over_tcp(self):
        async def scenario():
            broker = await BrokerServer(Broker(), port=0).start()
            store = NodeStore('127.0.0.1')
            fetch_server = await FetchServer(store).start()
            admin = await BrokerClient.connect('127.0.0.1', broker.port)
            await admin.create_topic(TopicConfig('cam', ('frames',)))
            model = build_model('identity', 'id', 'cam', 'echo', output_size=4)
            process = await ModelProcess.connect('127.0.0.1', broker.port, model, EventLog('model', ManualClock()),
                                                 'c1')
            await process.start()
            stop = asyncio.Event()
            runner = asyncio.create_task(process.run(stop))
            source = SourceProcess(admin, 'cam', 'frames', EventLog('source', ManualClock()), store)
            payloads = [bytes([i]) * 4 for i in range(5)]
            for i, payload in enumerate(payloads):
                await source.produce(payload, event_ts=i)
            for _ in range(200):
                if len(process.outputs) == len(payloads):
                    break
                await asyncio.sleep(0.01)
            stop.set()
            await runner
            await process.close()
            await admin.close()
            await fetch_server.close()
            await broker.close()
            return process.outputs, process.log.events

        outputs, events = asyncio.run(scenario())
        self.assertEqual([p.value for p in outputs], [bytes([i]) * 4 for i in range(5)])
        self.assertEqual(events[-1].kind, EventKind.SHUTDOWN)

    def test_unknown_topic_is_named(self):
        async def scenario():
            broker = await BrokerServer(Broker(), port=0).start()
            model = build_model('identity', 'id', 'nowhere', 'echo')
            process = await ModelProcess.connect('127.0.0.1', broker.port, model, EventLog('m', ManualClock()), 'c')
            try:
                await process.start()
            finally:
                await process.subscriber.close()
                await process.publisher.close()
                await broker.close()

        with self.assertRaisesMessage(Exception, 'nowhere'):
            asyncio.run(scenario())
