import asyncio
import json
import os
import signal
import tempfile
import threading
from io import StringIO

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from broker.server import BrokerServer
from broker.service import Broker
from core.exceptions import ConfigError, InvalidTopology, ReplayDivergence, UnknownTopic
from core.types import TopicConfig
from metrics.events import EventKind, MetricEvent, read_log
from metrics.models import ScenarioRun

from .base import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_RUNTIME, exit_code, parse_address, parse_params

SCENARIO = {
    'name': 'cli_pair',
    'seed': 5,
    'duration_ms': 300,
    'default_link': {'latency_ms': 0.1, 'bandwidth': 125_000_000},
    'streams': [
        {'stream': 'a', 'topic': 'pair', 'node': 'edge0', 'period_ms': 20},
        {'stream': 'b', 'topic': 'pair', 'node': 'edge1', 'period_ms': 50, 'start_ms': 7},
    ],
    'topics': [{'topic': 'pair', 'streams': ['a', 'b']}],
    'models': [{'id': 'adder', 'model': 'sum', 'consumes': 'pair', 'produces': 'total', 'node': 'server'}],
}


def run_command(*args):
    out, err = StringIO(), StringIO()
    call_command(*args, stdout=out, stderr=err)
    return out.getvalue(), err.getvalue()


class BrokerThread(threading.Thread):
    """A live broker on its own event loop for commands running in the test thread."""

    def __init__(self, topics=()):
        super().__init__(daemon=True)
        self.broker = Broker()
        for config in topics:
            self.broker.create_topic(config)
        self.loop = asyncio.new_event_loop()
        self.ready = threading.Event()
        self.port = None

    def run(self):
        asyncio.set_event_loop(self.loop)
        server = self.loop.run_until_complete(BrokerServer(self.broker, port=0).start())
        self.port = server.port
        self.ready.set()
        self.loop.run_forever()
        self.loop.run_until_complete(server.close())
        self.loop.close()

    def __enter__(self):
        self.start()
        self.ready.wait(5)
        return self

    def __exit__(self, *exc):
        self.loop.call_soon_threadsafe(self.loop.stop)
        self.join(5)


class ScenarioFileMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.logs = os.path.join(self.tmp.name, 'logs')
        self.scenario = self.write_scenario(SCENARIO)

    def write_scenario(self, data, name='scenario.json'):
        path = os.path.join(self.tmp.name, name)
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(data, fh, indent=2)
        return path


class HelperTests(SimpleTestCase):
    def test_exit_codes(self):
        self.assertEqual(exit_code(ConfigError('x')), EXIT_CONFIG)
        self.assertEqual(exit_code(InvalidTopology('x')), EXIT_CONFIG)
        self.assertEqual(exit_code(UnknownTopic('x')), EXIT_RUNTIME)
        self.assertEqual(exit_code(ReplayDivergence('x')), EXIT_DIVERGENCE)

    def test_parse_address(self):
        self.assertEqual(parse_address('10.0.0.2:7500'), ('10.0.0.2', 7500))
        self.assertEqual(parse_address(':7500'), ('127.0.0.1', 7500))
        self.assertEqual(parse_address('leader'), ('leader', 7400))
        with self.assertRaises(ConfigError):
            parse_address('leader:http')

    def test_parse_params(self):
        self.assertEqual(parse_params(['threshold=3', 'label=hot', 'table=[1,2]']),
                         {'threshold': 3, 'label': 'hot', 'table': [1, 2]})
        with self.assertRaises(ConfigError):
            parse_params(['threshold'])


class SimCommandTests(ScenarioFileMixin, SimpleTestCase):
    def test_run_report_and_replay(self):
        out, err = run_command('sim', '--scenario', self.scenario, '--out', self.logs)
        self.assertIn('Scenario cli_pair (seed 5)', out)
        self.assertEqual(err, '')
        self.assertEqual(sorted(os.listdir(self.logs)), ['edge0.log', 'edge1.log', 'server.log'])

        out, _ = run_command('metrics_report', self.logs)
        self.assertIn('end_to_end\tmedian\t', out)

        out, _ = run_command('replay', self.logs)
        self.assertIn('server/pair:', out)
        self.assertIn('Replayed 1 pipelines', out)

    def test_csv_report(self):
        run_command('sim', '--scenario', self.scenario, '--out', self.logs)
        path = os.path.join(self.tmp.name, 'report.csv')
        run_command('metrics_report', self.logs, '--csv', path)
        with open(path, encoding='utf-8') as fh:
            self.assertEqual(fh.readline().strip(), 'metric,statistic,value')

    def test_report_with_logs_and_out_flags(self):
        run_command('sim', '--scenario', self.scenario, '--out', self.logs)
        path = os.path.join(self.tmp.name, 'flags.csv')
        out, _ = run_command('metrics_report', '--logs', self.logs, '--out', path)
        self.assertIn(f'to {path}', out)
        with open(path, encoding='utf-8') as fh:
            self.assertEqual(fh.readline().strip(), 'metric,statistic,value')

    def test_report_without_a_log_directory(self):
        with self.assertRaises(CommandError) as caught:
            run_command('metrics_report')
        self.assertEqual(caught.exception.returncode, EXIT_CONFIG)

    def test_mutated_log_reports_the_divergence(self):
        run_command('sim', '--scenario', self.scenario, '--out', self.logs)
        path = os.path.join(self.logs, 'server.log')
        with open(path, encoding='utf-8') as fh:
            lines = fh.readlines()
        emits = [n for n, line in enumerate(lines) if MetricEvent.from_line(line).kind == EventKind.JOIN_EMIT]
        event = MetricEvent.from_line(lines[emits[3]])
        event.extra['slots'][0][1] += 1
        lines[emits[3]] = event.to_line() + '\n'
        with open(path, 'w', encoding='utf-8') as fh:
            fh.writelines(lines)

        with self.assertRaises(CommandError) as caught:
            run_command('replay', self.logs)
        self.assertEqual(caught.exception.returncode, EXIT_DIVERGENCE)
        self.assertIn(f'join seq {event.seq}', str(caught.exception))

    def test_replay_of_an_empty_directory(self):
        os.makedirs(self.logs)
        out, _ = run_command('replay', self.logs)
        self.assertIn('Replayed 0 pipelines', out)

    def test_missing_log_directory_is_a_runtime_error(self):
        with self.assertRaises(CommandError) as caught:
            run_command('replay', os.path.join(self.tmp.name, 'nowhere'))
        self.assertEqual(caught.exception.returncode, EXIT_RUNTIME)

    def test_config_errors_exit_with_one(self):
        broken = os.path.join(self.tmp.name, 'broken.json')
        with open(broken, 'w', encoding='utf-8') as fh:
            fh.write('{\n  "name": "broken",\n  "streams": [\n}\n')
        with self.assertRaises(CommandError) as caught:
            run_command('sim', '--scenario', broken, '--out', self.logs)
        self.assertEqual(caught.exception.returncode, EXIT_CONFIG)
        self.assertIn('broken.json:4:', str(caught.exception))

    def test_invalid_topology_exits_with_one(self):
        data = json.loads(json.dumps(SCENARIO))
        data['models'][0]['consumes'] = 'elsewhere'
        with self.assertRaises(CommandError) as caught:
            run_command('sim', '--scenario', self.write_scenario(data, 'bad.json'), '--out', self.logs)
        self.assertEqual(caught.exception.returncode, EXIT_CONFIG)

    def test_log_dir_defaults_to_the_setting(self):
        with self.settings(EDGESTREAM={'LOG_DIR': self.logs}):
            out, _ = run_command('sim', '--scenario', self.scenario)
        self.assertTrue(os.path.isfile(os.path.join(self.logs, 'cli_pair', 'server.log')))
        self.assertIn(os.path.join(self.logs, 'cli_pair'), out)


class PersistCommandTests(ScenarioFileMixin, TestCase):
    def test_sim_persists_the_report(self):
        out, _ = run_command('sim', '--scenario', self.scenario, '--out', self.logs, '--persist')
        run = ScenarioRun.objects.get()
        self.assertIn(f'Stored as run {run.pk}', out)
        self.assertEqual(run.name, 'cli_pair')
        self.assertEqual(run.seed, 5)
        self.assertTrue(run.rows.filter(metric='end_to_end', statistic='median').exists())

    def test_metrics_report_persists_as_live(self):
        run_command('sim', '--scenario', self.scenario, '--out', self.logs)
        run_command('metrics_report', self.logs, '--persist', '--name', 'replayed')
        run = ScenarioRun.objects.get()
        self.assertEqual((run.name, run.mode), ('replayed', ScenarioRun.MODE_LIVE))


class LiveCommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_model_on_unknown_topic_names_it(self):
        with BrokerThread() as broker:
            with self.assertRaises(CommandError) as caught:
                run_command('model', '--leader', f'127.0.0.1:{broker.port}', '--topic', 'nowhere',
                            '--model', 'identity', '--output', 'echo', '--log-dir', self.tmp.name)
        self.assertEqual(caught.exception.returncode, EXIT_RUNTIME)
        self.assertIn('nowhere', str(caught.exception))

    def test_sigterm_ends_the_log_with_a_shutdown_marker(self):
        previous = signal.getsignal(signal.SIGTERM)
        # Swallow a signal that lands before the command installs its handler.
        signal.signal(signal.SIGTERM, lambda *_: None)
        self.addCleanup(signal.signal, signal.SIGTERM, previous)
        timer = threading.Timer(0.5, os.kill, (os.getpid(), signal.SIGTERM))
        with BrokerThread([TopicConfig('cam', ('frames',))]) as broker:
            timer.start()
            try:
                out, _ = run_command('source', '--leader', f'127.0.0.1:{broker.port}', '--topic', 'cam',
                                     '--stream', 'frames', '--routing', 'eager', '--period-ms', '5',
                                     '--count', '1000', '--log-dir', self.tmp.name)
            finally:
                timer.cancel()
        events = read_log(os.path.join(self.tmp.name, 'frames.log'))
        self.assertEqual(events[-1].kind, EventKind.SHUTDOWN)
        published = events[-1].extra['published']
        self.assertTrue(0 < published < 1000)
        self.assertIn(broker.broker.stats.headers_in, (published, published + 1))
        self.assertIn('Source frames stopped', out)
