import random

from django.test import SimpleTestCase

from .exceptions import ConfigError, ContractViolation
from .serializers import TopicConfigSerializer, load_validated
from .timing import ManualClock, age, compute_skew, is_fresh
from .types import Header, JoinMode, JoinTuple, PayloadLocator, Slot, TimeBasis, TopicConfig, ms, parse_duration, seconds


def header(stream, event_ts, publish_ts=None, topic='t'):
    return Header(topic, stream, event_ts, event_ts if publish_ts is None else publish_ts, inline=b'')


class SkewTests(SimpleTestCase):
    def test_skew_of_four_slots(self):
        self.assertEqual(compute_skew([ms(100), ms(102), ms(103), ms(101)]), ms(3))

    def test_single_timestamp_has_no_skew(self):
        self.assertEqual(compute_skew([42]), 0)

    def test_empty_input_is_a_contract_violation(self):
        with self.assertRaises(ContractViolation):
            compute_skew([])

    def test_skew_properties(self):
        rng = random.Random(7)
        for _ in range(500):
            values = [rng.randint(0, 10**9) for _ in range(rng.randint(1, 8))]
            skew = compute_skew(values)
            self.assertGreaterEqual(skew, 0)
            shuffled = values[:]
            rng.shuffle(shuffled)
            self.assertEqual(compute_skew(shuffled), skew)
            shift = rng.randint(0, 10**6)
            self.assertEqual(compute_skew([v + shift for v in values]), skew)


class FreshnessTests(SimpleTestCase):
    def test_stale_item(self):
        self.assertFalse(is_fresh(header('a', ms(0)), ms(600), ms(500)))

    def test_boundary_is_fresh(self):
        self.assertTrue(is_fresh(header('a', ms(100)), ms(600), ms(500)))

    def test_unlimited_threshold(self):
        self.assertTrue(is_fresh(header('a', 0), seconds(3600), None))

    def test_future_item_has_zero_age(self):
        self.assertEqual(age(ms(10), ms(5)), 0)
        self.assertTrue(is_fresh(header('a', ms(10)), ms(5), 0))


class ClockTests(SimpleTestCase):
    def test_manual_clock_moves_forward_only(self):
        clock = ManualClock(10)
        clock.advance(5)
        self.assertEqual(clock.now(), 15)
        with self.assertRaises(ContractViolation):
            clock.set(3)


class DurationTests(SimpleTestCase):
    def test_units(self):
        self.assertEqual(parse_duration(500), 500_000)
        self.assertEqual(parse_duration('5s'), 5_000_000)
        self.assertEqual(parse_duration('250us'), 250)
        self.assertEqual(parse_duration('1.5ms'), 1_500)
        self.assertEqual(parse_duration('2m'), 120_000_000)
        self.assertIsNone(parse_duration(None))

    def test_garbage(self):
        for value in ('fast', '5 hours', True):
            with self.assertRaises(ConfigError):
                parse_duration(value)


class HeaderTests(SimpleTestCase):
    def test_exactly_one_body(self):
        with self.assertRaises(ContractViolation):
            Header('t', 's', 0, 0)
        with self.assertRaises(ContractViolation):
            Header('t', 's', 0, 0, locator=PayloadLocator('h', 1, 0, 0, 0), inline=b'')

    def test_publish_precedes_event(self):
        with self.assertRaises(ContractViolation):
            Header('t', 's', 10, 9, inline=b'')

    def test_published_at_clamps_to_event_ts(self):
        self.assertEqual(header('s', 10).published_at(4).publish_ts, 10)
        self.assertEqual(header('s', 10).published_at(40).publish_ts, 40)

    def test_basis_ts(self):
        h = header('s', 10, 30)
        self.assertEqual(h.basis_ts(TimeBasis.EVENT_TIME), 10)
        self.assertEqual(h.basis_ts(TimeBasis.PROCESSING_TIME), 30)

    def test_names_are_validated(self):
        with self.assertRaises(ConfigError):
            header('', 0)
        with self.assertRaises(ConfigError):
            header('s' * 256, 0)
        with self.assertRaises(ConfigError):
            header('a', 0, topic='')
        self.assertEqual(header('s' * 255, 0).stream, 's' * 255)


class TopicConfigTests(SimpleTestCase):
    def test_time_triggered_needs_window(self):
        with self.assertRaises(ConfigError):
            TopicConfig('t', ('a',), JoinMode.TIME_TRIGGERED)

    def test_duplicate_stream(self):
        with self.assertRaises(ConfigError):
            TopicConfig('t', ('a', 'a'))

    def test_long_name(self):
        with self.assertRaises(ConfigError):
            TopicConfig('t' * 256, ('a',))

    def test_target_frequency_upgrades_data_triggered(self):
        config = TopicConfig('t', ('a', 'b'), target_prediction_frequency=ms(30))
        self.assertEqual(config.effective_mode(), JoinMode.HYBRID)
        self.assertEqual(config.effective_min_interval(), ms(30))

    def test_dict_round_trip(self):
        config = TopicConfig('t', ('a', 'b'), JoinMode.HYBRID, min_interval=ms(10), max_skew=ms(5))
        self.assertEqual(TopicConfig.from_dict(config.to_dict()), config)


class JoinTupleTests(SimpleTestCase):
    def test_signature_and_trigger(self):
        tup = JoinTuple('t', (Slot(header('a', 1)), Slot(header('b', 2))), 'b', 2, 5)
        self.assertEqual(tup.signature(), ('b', (('a', 1), ('b', 2))))
        self.assertEqual(tup.trigger_header.event_ts, 2)

    def test_new_information_is_not_part_of_identity(self):
        slots = (Slot(header('a', 1)),)
        self.assertEqual(JoinTuple('t', slots, 'a', 1, 1, True), JoinTuple('t', slots, 'a', 1, 1, False))


class TopicConfigSerializerTests(SimpleTestCase):
    def test_valid_hybrid(self):
        config = load_validated(TopicConfigSerializer, {
            'topic': 'activity', 'streams': ['a', 'b'], 'join_mode': 'hybrid',
            'min_interval_ms': 30, 'freshness_threshold_ms': '500ms',
        })
        self.assertEqual(config.min_interval, 30_000)
        self.assertEqual(config.freshness_threshold, 500_000)
        self.assertIsNone(config.max_skew)

    def test_missing_window_reports_field(self):
        with self.assertRaises(ConfigError) as ctx:
            load_validated(TopicConfigSerializer, {'topic': 't', 'streams': ['a'], 'join_mode': 'time_triggered'})
        self.assertIn('window_ms', ctx.exception.message)

    def test_negative_duration(self):
        serializer = TopicConfigSerializer(data={'topic': 't', 'streams': ['a'], 'max_skew_ms': -1})
        self.assertFalse(serializer.is_valid())
        self.assertIn('max_skew_ms', serializer.errors)

    def test_repeated_streams(self):
        serializer = TopicConfigSerializer(data={'topic': 't', 'streams': ['a', 'a']})
        self.assertFalse(serializer.is_valid())
        self.assertIn('streams', serializer.errors)
