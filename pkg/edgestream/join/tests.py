import random
from dataclasses import replace

from django.test import SimpleTestCase

from core.exceptions import IncompleteLog, UnknownStream
from core.timing import ManualClock, compute_skew
from core.types import Header, JoinMode, JoinTuple, Slot, TimeBasis, TopicConfig, ms
from metrics.events import EventKind, EventLog

from .joiners import (
    ApproximateTimeJoiner, DataTriggeredJoiner, HybridJoiner, TimeTriggeredJoiner, expired_slots, make_joiner,
    skew_filter,
)
from .replay import replay_log, replay_pipeline

STREAMS = ('A', 'B', 'C', 'D')

# Arrival schedule of the four-stream walk-through: (name, time).
SCHEDULE = [
    ('A1', 1), ('B1', 2), ('C1', 3), ('D1', 4), ('B2', 6), ('D2', 8), ('B3', 11), ('C2', 13), ('A2', 16),
]


def item(name, ts, topic='T'):
    return Header(topic, name[0], ts, ts, inline=name.encode())


def names(joined):
    return tuple(slot.header.inline.decode() for slot in joined.slots)


def config(mode=JoinMode.DATA_TRIGGERED, streams=STREAMS, **kwargs):
    return TopicConfig('T', streams, mode, **kwargs)


def run_arrivals(joiner, arrivals):
    tuples = []
    for header, now in arrivals:
        tuples.extend(joiner.advance_to(now))
        joined = joiner.on_arrival(header, now)
        if joined is not None:
            tuples.append(joined)
    return tuples


class WalkThroughTests(SimpleTestCase):
    def test_data_triggered_tuples(self):
        joiner = DataTriggeredJoiner(config())
        tuples = run_arrivals(joiner, [(item(n, t), t) for n, t in SCHEDULE])
        self.assertEqual([(names(t), t.trigger_stream) for t in tuples], [
            (('A1', 'B1', 'C1', 'D1'), 'D'),
            (('A1', 'B2', 'C1', 'D1'), 'B'),
            (('A1', 'B2', 'C1', 'D2'), 'D'),
            (('A1', 'B3', 'C1', 'D2'), 'B'),
            (('A1', 'B3', 'C2', 'D2'), 'C'),
            (('A2', 'B3', 'C2', 'D2'), 'A'),
        ])

    def test_time_triggered_tuples(self):
        joiner = TimeTriggeredJoiner(config(JoinMode.TIME_TRIGGERED, window=5))
        tuples = run_arrivals(joiner, [(item(n, t), t) for n, t in SCHEDULE])
        tuples.extend(joiner.advance_to(20))
        self.assertEqual([names(t) for t in tuples], [
            ('A1', 'B1', 'C1', 'D1'),
            ('A1', 'B2', 'C1', 'D2'),
            ('A1', 'B3', 'C2', 'D2'),
            ('A2', 'B3', 'C2', 'D2'),
        ])
        self.assertEqual([t.emit_ts for t in tuples], [5, 10, 15, 20])

    def test_data_triggered_waits_for_every_stream(self):
        joiner = DataTriggeredJoiner(config())
        tuples = run_arrivals(joiner, [(item(n, t), t) for n, t in SCHEDULE[:3]])
        self.assertEqual(tuples, [])
        self.assertEqual([reason for _, reason in joiner.take_skips()], ['warmup'] * 3)

    def test_late_item_is_joined_but_not_stored(self):
        joiner = DataTriggeredJoiner(config(streams=('A', 'B')))
        run_arrivals(joiner, [(item('A5', 5), 5), (item('B6', 6), 6)])
        joined = joiner.on_arrival(item('A2', 2), 7)
        self.assertEqual(names(joined), ('A2', 'B6'))
        self.assertEqual(names(joiner.on_arrival(item('B8', 8), 8)), ('A5', 'B8'))

    def test_equal_timestamp_does_not_replace(self):
        joiner = DataTriggeredJoiner(config(streams=('A', 'B')))
        run_arrivals(joiner, [(item('Ax', 5), 5), (item('Ay', 5), 6), (item('B1', 7), 7)])
        self.assertEqual(joiner.latest[0].inline, b'Ax')

    def test_empty_window_repeats_previous_tuple(self):
        joiner = TimeTriggeredJoiner(config(JoinMode.TIME_TRIGGERED, window=5))
        run_arrivals(joiner, [(item(n, t), t) for n, t in SCHEDULE[:4]])
        first, second = joiner.advance_to(10)
        self.assertEqual(first.slots, second.slots)
        self.assertTrue(first.new_information)
        self.assertFalse(second.new_information)

    def test_no_tuple_before_every_stream_arrived(self):
        joiner = TimeTriggeredJoiner(config(JoinMode.TIME_TRIGGERED, window=5))
        run_arrivals(joiner, [(item('A1', 1), 1), (item('B1', 2), 2)])
        self.assertEqual(joiner.advance_to(5), [])

    def test_unknown_stream(self):
        with self.assertRaises(UnknownStream):
            DataTriggeredJoiner(config()).on_arrival(item('Z1', 1), 1)


class TimeTriggeredLatenessTests(SimpleTestCase):
    def setUp(self):
        self.joiner = TimeTriggeredJoiner(config(JoinMode.TIME_TRIGGERED, streams=('A', 'B'), window=10))
        run_arrivals(self.joiner, [(item('A1', 1), 1), (item('B2', 2), 2)])
        self.joiner.advance_to(10)

    def test_straggler_within_one_window_is_used(self):
        self.joiner.on_arrival(item('A9', 9), 12)
        (joined,) = self.joiner.advance_to(20)
        self.assertEqual(names(joined), ('A9', 'B2'))

    def test_straggler_beyond_lateness_is_dropped(self):
        self.joiner.advance_to(20)
        self.joiner.on_arrival(item('A5', 5), 21)
        self.assertEqual(self.joiner.take_skips(), [(item('A5', 5), 'late')])

    def test_items_of_a_future_window_wait(self):
        self.joiner.on_arrival(item('A25', 25), 15)
        (joined,) = self.joiner.advance_to(20)
        self.assertEqual(names(joined), ('A1', 'B2'))
        (joined,) = self.joiner.advance_to(30)
        self.assertEqual(names(joined), ('A25', 'B2'))

    def test_superseded_within_window(self):
        run_arrivals(self.joiner, [(item('A11', 11), 11), (item('A13', 13), 13)])
        self.joiner.take_skips()
        (joined,) = self.joiner.advance_to(20)
        self.assertEqual(names(joined), ('A13', 'B2'))
        self.assertIn((item('A11', 11), 'superseded_in_window'), self.joiner.take_skips())


class HybridTests(SimpleTestCase):
    def test_throttle_example(self):
        joiner = HybridJoiner(config(JoinMode.HYBRID, streams=('A', 'B'), min_interval=ms(10)))
        joiner.on_arrival(item('A0', 0), 0)
        emitted = []
        for t in (0, 3, 5, 12):
            joined = joiner.on_arrival(item(f'B{t}', ms(t)), ms(t))
            if joined is not None:
                emitted.append((joined.emit_ts, names(joined)))
        self.assertEqual(emitted, [(0, ('A0', 'B0')), (ms(12), ('A0', 'B12'))])
        self.assertEqual(
            [(h.inline, reason) for h, reason in joiner.take_skips()],
            [(b'A0', 'warmup'), (b'B3', 'superseded_by_hybrid'), (b'B5', 'superseded_by_hybrid')],
        )

    def test_exact_interval_emits(self):
        joiner = HybridJoiner(config(JoinMode.HYBRID, streams=('A', 'B'), min_interval=ms(10)))
        joiner.on_arrival(item('A0', 0), 0)
        results = [joiner.on_arrival(item(f'B{t}', ms(t)), ms(t)) for t in (0, 10, 20, 30)]
        self.assertTrue(all(r is not None for r in results))

    def test_target_frequency_builds_hybrid(self):
        joiner = make_joiner(config(target_prediction_frequency=ms(30)))
        self.assertIsInstance(joiner, HybridJoiner)
        self.assertEqual(joiner.min_interval, ms(30))


def random_schedule(rng, streams, length, disorder=0.2):
    arrivals = []
    now = 0
    for index in range(length):
        now += rng.randint(0, 5)
        ts = now - rng.randint(0, 20) if rng.random() < disorder else now
        stream = rng.choice(streams)
        header = Header('T', stream, max(ts, 0), now, inline=str(index).encode())
        arrivals.append((header, now))
    return arrivals


def oracle_data_triggered(streams, arrivals):
    """Step through the schedule looking back over every earlier arrival."""
    expected = []
    for k, (header, _) in enumerate(arrivals):
        slots = []
        for stream in streams:
            if stream == header.stream:
                slots.append(header)
                continue
            earlier = [h for h, _ in arrivals[:k] if h.stream == stream]
            if not earlier:
                slots = None
                break
            best = earlier[0]
            for candidate in earlier[1:]:
                if candidate.event_ts > best.event_ts:
                    best = candidate
            slots.append(best)
        if slots is not None:
            expected.append(tuple(h.inline for h in slots))
    return expected


class DataTriggeredPropertyTests(SimpleTestCase):
    def test_completeness_over_random_schedules(self):
        rng = random.Random(20240601)
        violations = 0
        for _ in range(10_000):
            streams = tuple('S%d' % i for i in range(rng.randint(2, 6)))
            arrivals = random_schedule(rng, streams, rng.randint(1, 200))
            joiner = DataTriggeredJoiner(TopicConfig('T', streams))
            seen = set()
            expected_count = 0
            covered = set()
            for header, now in arrivals:
                if all(s in seen for s in streams if s != header.stream):
                    expected_count += 1
                post_warmup = all(s in seen for s in streams)
                seen.add(header.stream)
                joined = joiner.on_arrival(header, now)
                if joined is not None:
                    covered.update(slot.header.inline for slot in joined.slots)
                if post_warmup and header.inline not in covered:
                    violations += 1
            if joiner.emitted != expected_count:
                violations += 1
        self.assertEqual(violations, 0)

    def test_matches_brute_force_oracle(self):
        rng = random.Random(99)
        for _ in range(500):
            streams = tuple('S%d' % i for i in range(rng.randint(2, 6)))
            arrivals = random_schedule(rng, streams, rng.randint(1, 120), disorder=0.4)
            joiner = DataTriggeredJoiner(TopicConfig('T', streams))
            produced = [names_raw(t) for t in run_arrivals(joiner, arrivals)]
            self.assertEqual(produced, oracle_data_triggered(streams, arrivals))

    def test_determinism(self):
        rng = random.Random(5)
        for mode, extra in ((JoinMode.DATA_TRIGGERED, {}), (JoinMode.HYBRID, {'min_interval': 7}),
                            (JoinMode.TIME_TRIGGERED, {'window': 13}), (JoinMode.APPROXIMATE_TIME, {})):
            arrivals = random_schedule(rng, ('A', 'B', 'C'), 300)
            topic = TopicConfig('T', ('A', 'B', 'C'), mode, **extra)
            first = [t.signature() for t in run_arrivals(make_joiner(topic), arrivals)]
            second = [t.signature() for t in run_arrivals(make_joiner(topic), arrivals)]
            self.assertEqual(first, second)
            self.assertTrue(first)


def names_raw(joined):
    return tuple(slot.header.inline for slot in joined.slots)


class HybridPropertyTests(SimpleTestCase):
    def test_throttle_and_degenerate_interval(self):
        rng = random.Random(1234)
        violations = 0
        for _ in range(1_000):
            streams = tuple('S%d' % i for i in range(rng.randint(2, 5)))
            arrivals = random_schedule(rng, streams, rng.randint(1, 150))
            interval = rng.randint(1, 30)
            hybrid = HybridJoiner(TopicConfig('T', streams, JoinMode.HYBRID, min_interval=interval))
            emits = [t.emit_ts for t in run_arrivals(hybrid, arrivals)]
            violations += sum(1 for a, b in zip(emits, emits[1:]) if b - a < interval)

            zero = HybridJoiner(TopicConfig('T', streams, JoinMode.HYBRID, min_interval=0))
            data = DataTriggeredJoiner(TopicConfig('T', streams))
            if [t.signature() for t in run_arrivals(zero, arrivals)] != \
                    [t.signature() for t in run_arrivals(data, arrivals)]:
                violations += 1
        self.assertEqual(violations, 0)


class TimeTriggeredPropertyTests(SimpleTestCase):
    def test_one_tuple_per_window_holding_latest(self):
        rng = random.Random(77)
        for _ in range(200):
            arrivals = random_schedule(rng, ('A', 'B', 'C'), rng.randint(10, 200), disorder=0)
            topic = TopicConfig('T', ('A', 'B', 'C'), JoinMode.TIME_TRIGGERED, window=10,
                                time_basis=TimeBasis.PROCESSING_TIME)
            joiner = TimeTriggeredJoiner(topic)
            for header, now in arrivals:
                for joined in joiner.advance_to(now):
                    for slot in joined.slots:
                        best = max(h.publish_ts for h, t in arrivals
                                   if h.stream == slot.header.stream and h.publish_ts < joined.emit_ts)
                        self.assertEqual(slot.header.publish_ts, best)
                joiner.on_arrival(header, now)
            final = arrivals[-1][1] + 50
            emits = [t.emit_ts for t in joiner.advance_to(final)]
            self.assertEqual(len(emits), len(set(emits)))


class ApproximateTimeTests(SimpleTestCase):
    def test_each_message_used_at_most_once(self):
        joiner = ApproximateTimeJoiner(config(streams=('A', 'B')))
        arrivals = [(item('A1', 1), 1), (item('A2', 2), 2), (item('B3', 3), 3), (item('B4', 4), 4),
                    (item('A5', 5), 5)]
        tuples = run_arrivals(joiner, arrivals)
        self.assertEqual([names(t) for t in tuples], [('A2', 'B3'), ('A5', 'B4')])
        self.assertEqual(joiner.take_skips(), [(item('A1', 1), 'superseded_in_window')])
        self.assertEqual(joiner.pending_items(), [])


def tuple_at(*stamps):
    slots = tuple(Slot(Header('T', f's{i}', ts, ts, inline=b'')) for i, ts in enumerate(stamps))
    return JoinTuple('T', slots, 's0', stamps[0], max(stamps))


class SkewFilterTests(SimpleTestCase):
    def test_accepts_within_bound(self):
        verdict = skew_filter(tuple_at(ms(100), ms(102), ms(103), ms(101)), ms(5))
        self.assertTrue(verdict.accepted)
        self.assertEqual(verdict.skew, ms(3))

    def test_rejects_with_measured_skew(self):
        verdict = skew_filter(tuple_at(ms(100), ms(130)), ms(25))
        self.assertFalse(verdict.accepted)
        self.assertEqual(verdict.skew, ms(30))

    def test_unlimited(self):
        self.assertTrue(skew_filter(tuple_at(0, 10**12), None).accepted)

    def test_accepted_tuples_respect_bound(self):
        rng = random.Random(8)
        for _ in range(1000):
            joined = tuple_at(*[rng.randint(0, 1000) for _ in range(rng.randint(1, 6))])
            bound = rng.randint(0, 1000)
            if skew_filter(joined, bound).accepted:
                self.assertLessEqual(compute_skew(s.header.event_ts for s in joined.slots), bound)

    def test_expired_slots(self):
        self.assertEqual(expired_slots(tuple_at(100, 75, 101, 120), 20), [1])
        self.assertEqual(expired_slots(tuple_at(100, 75), None), [])


class ReplayTests(SimpleTestCase):
    def record(self, topic, arrivals, log=None):
        clock = ManualClock()
        log = log or EventLog('n1', clock)
        log.emit(EventKind.TOPIC_CONFIG, topic.topic, config=topic.to_dict())
        joiner = make_joiner(topic)
        seq = 0
        for index, (header, now) in enumerate(arrivals):
            clock.set(now)
            for joined in joiner.advance_to(now):
                self.log_emit(log, joined, seq)
                seq += 1
            log.item(EventKind.BROKER_DELIVER, header, seq=index, publish_ts=header.publish_ts)
            joined = joiner.on_arrival(header, now)
            if joined is not None:
                self.log_emit(log, joined, seq)
                seq += 1
        return log

    def log_emit(self, log, joined, seq):
        trigger = joined.trigger_header
        log.emit(EventKind.JOIN_EMIT, joined.topic, trigger.stream, trigger.event_ts, seq,
                 slots=[[s.header.stream, s.header.event_ts] for s in joined.slots])

    def test_replay_matches(self):
        arrivals = [(item(n, t), t) for n, t in SCHEDULE]
        for topic in (config(), config(JoinMode.HYBRID, min_interval=4)):
            result = replay_pipeline(self.record(topic, arrivals).events, 'n1', 'T')
            self.assertTrue(result.ok, result.divergence)
            self.assertEqual(result.logged, result.replayed)

    def test_time_triggered_replay(self):
        arrivals = [(item(n, t), t) for n, t in SCHEDULE] + [(item('A3', 21), 21)]
        log = self.record(config(JoinMode.TIME_TRIGGERED, window=5), arrivals)
        (result,) = replay_log(log.events)
        self.assertTrue(result.ok)
        self.assertEqual(result.logged, 4)

    def test_mutated_entry_reports_first_divergence(self):
        log = self.record(config(), [(item(n, t), t) for n, t in SCHEDULE])
        events = list(log.events)
        index = next(i for i, e in enumerate(events) if e.kind == EventKind.JOIN_EMIT and e.seq == 2)
        slots = events[index].extra['slots']
        slots[0] = ['A', 999]
        events[index] = replace(events[index], extra={'slots': slots})
        result = replay_pipeline(events, 'n1', 'T')
        self.assertFalse(result.ok)
        self.assertEqual(result.divergence.sequence, 2)
        self.assertEqual(result.divergence.index, 2)

    def test_empty_log(self):
        self.assertEqual(replay_log([]), [])

    def test_missing_config(self):
        with self.assertRaises(IncompleteLog):
            replay_pipeline([], 'n1', 'T')
