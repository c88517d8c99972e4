import csv
import os
import random
import tempfile

from django.test import SimpleTestCase, TestCase
from rest_framework import status
from rest_framework.test import APIClient

from core.exceptions import ContractViolation, IncompleteLog
from core.timing import ManualClock

from .events import EventKind, EventLog, LogSet, MetricEvent, merge_events, read_logs
from .models import ReportRow, ScenarioRun
from .report import (
    Distribution, LogIndex, UNACCOUNTED, accounting, item_latencies, nearest_rank, queueing_times, reaction_time,
    real_time_accuracy, report,
)

MS = 1_000


def single_item_log(times, node='n'):
    """One raw item through one pipeline, with events at the given instants."""
    log = EventLog(node, ManualClock())
    log.emit(EventKind.TOPIC_CONFIG, 'T', at=0)
    log.emit(EventKind.PRODUCE_BEGIN, 'T', 'A', 0, at=times['produce_begin'])
    log.emit(EventKind.PRODUCE_END, 'T', 'A', 0, 0, at=times['produce_end'])
    log.emit(EventKind.BROKER_DELIVER, 'T', 'A', 0, 0, at=times['deliver'], frame_bytes=40, payload_bytes=0)
    log.emit(EventKind.JOIN_EMIT, 'T', 'A', 0, 0, at=times['join'], slots=[['A', 0]], new=True)
    log.emit(EventKind.FETCH_END, 'T', 'A', 0, 0, at=times['join'], bytes=100)
    log.emit(EventKind.MODEL_BEGIN, 'T', 'A', 0, 0, at=times['model_begin'])
    log.emit(EventKind.MODEL_END, 'T', 'A', 0, 0, at=times['model_end'])
    return log.events


class EventLogTests(SimpleTestCase):
    def test_line_format(self):
        event = MetricEvent(12, 'edge1', EventKind.SKIP, 'T', 'A', 5, None, {'reason': 'stale', 'b': 1})
        self.assertEqual(event.to_line(), '12\tedge1\tskip\tT\tA\t5\t-\t{"b":1,"reason":"stale"}')
        self.assertEqual(MetricEvent.from_line(event.to_line()), event)

    def test_absent_fields(self):
        event = MetricEvent(3, 'n', EventKind.SHUTDOWN)
        self.assertEqual(event.to_line(), '3\tn\tshutdown\t-\t-\t-\t-\t{}')
        self.assertEqual(MetricEvent.from_line(event.to_line()), event)

    def test_truncated_line(self):
        with self.assertRaises(IncompleteLog):
            MetricEvent.from_line('12\tedge1\tskip')

    def test_unknown_kind(self):
        with self.assertRaises(IncompleteLog):
            MetricEvent.from_line('12\tedge1\tteleport\t-\t-\t-\t-\t{}')

    def test_files_per_node_merge_by_time(self):
        with tempfile.TemporaryDirectory() as directory:
            logs = LogSet(ManualClock(), directory)
            logs['b'].emit(EventKind.PRODUCE_BEGIN, 'T', 'A', 1, at=5)
            logs['a'].emit(EventKind.PRODUCE_BEGIN, 'T', 'B', 2, at=5)
            logs['a'].emit(EventKind.PRODUCE_BEGIN, 'T', 'B', 3, at=1)
            logs.close()
            self.assertEqual(sorted(os.listdir(directory)), ['a.log', 'b.log'])
            merged = read_logs(directory)
            self.assertEqual([(e.at, e.node, e.event_ts) for e in merged], [(1, 'a', 3), (5, 'a', 2), (5, 'b', 1)])
            self.assertEqual(merged, logs.events())

    def test_missing_directory(self):
        with self.assertRaises(IncompleteLog):
            read_logs('/nonexistent/edgestream/logs')

    def test_shutdown_marker_closes_file(self):
        with tempfile.TemporaryDirectory() as directory:
            log = EventLog('n', ManualClock(7), directory)
            log.shutdown(signal='SIGTERM')
            with open(log.path) as fh:
                self.assertTrue(fh.read().strip().split('\n')[-1].startswith('7\tn\tshutdown'))

    def test_merge_keeps_log_order_on_ties(self):
        first = [MetricEvent(1, 'n', EventKind.PRODUCE_BEGIN, 'T', 'A', i) for i in range(3)]
        self.assertEqual(merge_events([first]), first)


class DistributionTests(SimpleTestCase):
    def test_nearest_rank(self):
        values = list(range(1, 11))
        self.assertEqual(nearest_rank(values, 50), 5)
        self.assertEqual(nearest_rank(values, 95), 10)
        self.assertEqual(nearest_rank(values, 0), 1)

    def test_summary(self):
        summary = Distribution.of([4, 1, 3, 2])
        self.assertEqual((summary.count, summary.median, summary.min, summary.max, summary.mean), (4, 2, 1, 4, 2.5))

    def test_empty(self):
        self.assertIsNone(Distribution.of([]))
        with self.assertRaises(ContractViolation):
            nearest_rank([], 50)


class ReportTests(SimpleTestCase):
    TIMES = {'produce_begin': 0, 'produce_end': 2, 'deliver': 5, 'join': 7, 'model_begin': 8, 'model_end': 20}

    def test_single_item_hand_subtraction(self):
        result = report(single_item_log(self.TIMES))
        self.assertEqual(result.value('producer_sending'), 2)
        self.assertEqual(result.value('consumer_receiving'), 3)
        self.assertEqual(result.value('total_communication'), 5)
        self.assertEqual(result.value('processing'), 12)
        self.assertEqual(result.value('end_to_end'), 20)
        self.assertEqual(result.value('reaction_time'), 7)
        self.assertEqual(result.total_working_duration, 20)
        self.assertEqual(result.backlog, 20)
        self.assertEqual(result.totals['fetched_bytes'], 100)
        self.assertEqual(result.totals['broker_payload_bytes'], 0)
        self.assertEqual(result.skipped, {'predicted': 1})
        self.assertEqual(result.violations, [])

    def test_reaction_time(self):
        log = EventLog('n', ManualClock())
        log.emit(EventKind.PRODUCE_BEGIN, 'T', 'A', 100 * MS, at=100 * MS)
        emit = log.emit(EventKind.JOIN_EMIT, 'T', 'A', 100 * MS, 0, at=109 * MS, slots=[['A', 100 * MS]])
        self.assertEqual(reaction_time(LogIndex(log.events), emit), 9 * MS)

    def test_reaction_time_without_production(self):
        log = EventLog('n', ManualClock())
        emit = log.emit(EventKind.JOIN_EMIT, 'T', 'A', 5, 0, at=9, slots=[['A', 5]])
        with self.assertRaises(IncompleteLog):
            reaction_time(LogIndex(log.events), emit)

    def test_queueing_time_of_local_predictions(self):
        logs = LogSet(ManualClock())
        for i, finished in enumerate((10, 11, 12, 40)):
            local = logs[f'edge{i}']
            topic = f'cam{i}'
            local.emit(EventKind.PRODUCE_BEGIN, topic, 'x', i, at=i)
            local.emit(EventKind.JOIN_EMIT, topic, 'x', i, 0, at=i, slots=[['x', i]])
            local.emit(EventKind.MODEL_BEGIN, topic, 'x', i, 0, at=i)
            local.emit(EventKind.MODEL_END, topic, 'x', i, 0, at=finished * MS)
            local.emit(EventKind.PREDICT_PUBLISH, 'ensemble', f'v{i}', i, at=finished * MS,
                       origin=[topic, 'x', i], tuple=0, value=1)
        logs['leader'].emit(EventKind.JOIN_EMIT, 'ensemble', 'v3', 3, 0, at=40 * MS,
                            slots=[[f'v{i}', i] for i in range(4)])
        summary = report(logs.events()).distributions['queueing_time']
        self.assertEqual((summary.min, summary.max), (0, 30 * MS))
        self.assertEqual(sorted(queueing_times(LogIndex(logs.events())).values()), [0, 28 * MS, 29 * MS, 30 * MS])

    def test_randomized_logs_respect_latency_identities(self):
        rng = random.Random(5)
        for _ in range(200):
            times = {}
            clock = rng.randint(0, 1000)
            for name in ('produce_begin', 'produce_end', 'deliver', 'join', 'model_begin', 'model_end'):
                clock += rng.randint(0, 50)
                times[name] = clock
            result = report(single_item_log(times))
            latency = next(iter(item_latencies(LogIndex(single_item_log(times))).values()))
            self.assertEqual(latency.total_communication, latency.producer_sending + latency.consumer_receiving)
            self.assertGreaterEqual(latency.end_to_end, latency.total_communication + latency.processing)
            self.assertEqual(result.violations, [])

    def test_accounting(self):
        log = EventLog('n', ManualClock())
        log.emit(EventKind.TOPIC_CONFIG, 'T', at=0)
        for ts in (1, 2, 3):
            log.emit(EventKind.PRODUCE_BEGIN, 'T', 'A', ts, at=ts)
        log.emit(EventKind.JOIN_EMIT, 'T', 'A', 1, 0, at=4, slots=[['A', 1]])
        log.emit(EventKind.MODEL_END, 'T', 'A', 1, 0, at=5)
        log.emit(EventKind.SKIP, 'T', 'A', 2, at=5, reason='stale')
        log.emit(EventKind.SKIP, 'T', 'A', 2, at=6, reason='unprocessed')
        outcome = accounting(LogIndex(log.events))
        self.assertEqual(outcome, {('T', 'A', 1): 'predicted', ('T', 'A', 2): 'stale', ('T', 'A', 3): UNACCOUNTED})
        self.assertTrue(report(log.events).violations)

    def test_skipped_item_later_predicted_counts_as_predicted(self):
        log = EventLog('n', ManualClock())
        log.emit(EventKind.TOPIC_CONFIG, 'T', at=0)
        log.emit(EventKind.PRODUCE_BEGIN, 'T', 'A', 1, at=1)
        log.emit(EventKind.SKIP, 'T', 'A', 1, at=2, reason='warmup')
        log.emit(EventKind.JOIN_EMIT, 'T', 'B', 3, 0, at=4, slots=[['A', 1], ['B', 3]])
        log.emit(EventKind.MODEL_END, 'T', 'B', 3, 0, at=5)
        self.assertEqual(accounting(LogIndex(log.events))[('T', 'A', 1)], 'predicted')

    def test_report_is_pure(self):
        events = single_item_log(self.TIMES)
        self.assertEqual(report(events).rows(), report(list(events)).rows())

    def test_csv(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'report.csv')
            report(single_item_log(self.TIMES)).write_csv(path)
            with open(path, newline='') as fh:
                rows = list(csv.reader(fh))
        self.assertEqual(rows[0], ['metric', 'statistic', 'value'])
        self.assertIn(['end_to_end', 'median', '20'], rows)


class RealTimeAccuracyTests(SimpleTestCase):
    TIMELINE = [(i * 100 * MS, i % 2) for i in range(20)]

    def test_perfect_agreement(self):
        predictions = [(i * 100 * MS + 10 * MS, i % 2) for i in range(20)]
        result = real_time_accuracy(predictions, self.TIMELINE)
        self.assertEqual(result.accuracy, 1.0)
        self.assertEqual(result.macro_f1, 1.0)

    def test_late_predictions_meet_the_successor_label(self):
        predictions = [(i * 100 * MS + 150 * MS, i % 2) for i in range(19)]
        self.assertEqual(real_time_accuracy(predictions, self.TIMELINE).accuracy, 0.0)

    def test_prediction_before_first_label_is_excluded(self):
        result = real_time_accuracy([(-5, 0), (5, 0)], self.TIMELINE)
        self.assertEqual((result.evaluated, result.excluded), (1, 1))

    def test_macro_f1(self):
        timeline = [(0, 1), (10, 1), (20, 2)]
        result = real_time_accuracy([(0, 1), (10, 2), (20, 2)], timeline)
        self.assertAlmostEqual(result.macro_f1, 2 / 3)
        self.assertAlmostEqual(result.accuracy, 2 / 3)

    def test_empty_prediction_set(self):
        with self.assertRaises(ContractViolation):
            real_time_accuracy([], self.TIMELINE)


class ReportApiTests(TestCase):
    def setUp(self):
        self.client = APIClient()
        result = report(single_item_log(ReportTests.TIMES))
        self.run_ = ScenarioRun.record(result, 'table4_reaction', seed=7, log_dir='/tmp/logs')

    def test_record_stores_rows(self):
        self.assertEqual(self.run_.predicted_items, 1)
        self.assertEqual(self.run_.backlog_us, 20)
        self.assertTrue(ReportRow.objects.filter(run=self.run_, metric='end_to_end', statistic='median').exists())

    def test_list(self):
        response = self.client.get('/api/v1/runs/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['pagination']['count'], 1)
        self.assertEqual(response.data['results'][0]['name'], 'table4_reaction')
        self.assertEqual(response.data['results'][0]['mode_name'], 'Simulation')

    def test_filter_by_name(self):
        response = self.client.get('/api/v1/runs/', {'name': 'other'})
        self.assertEqual(response.data['pagination']['count'], 0)

    def test_detail_has_medians(self):
        response = self.client.get(f'/api/v1/runs/{self.run_.pk}/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['medians']['end_to_end'], 20.0)

    def test_nested_rows(self):
        response = self.client.get(f'/api/v1/runs/{self.run_.pk}/rows/', {'metric': 'processing'})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        statistics = {row['statistic'] for row in response.data['results']}
        self.assertIn('p99', statistics)

    def test_rows_of_a_run_fit_one_page(self):
        response = self.client.get(f'/api/v1/runs/{self.run_.pk}/rows/')
        self.assertEqual(response.data['pagination']['total_pages'], 1)
        self.assertEqual(response.data['pagination']['count'], self.run_.rows.count())
        self.assertEqual(len(response.data['results']), self.run_.rows.count())

    def test_read_only(self):
        response = self.client.post('/api/v1/runs/', {'name': 'x'}, format='json')
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)

    def test_missing_run_uses_error_envelope(self):
        response = self.client.get('/api/v1/runs/999/')
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)
        self.assertTrue(response.data['error'])
