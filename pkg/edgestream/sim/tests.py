import copy
import filecmp
import os
import random
import tempfile
from collections import defaultdict

import simpy
from django.test import SimpleTestCase

from core.exceptions import ConfigError, InvalidTopology, UnreachableNode
from core.types import ms, seconds
from join.replay import replay_log
from metrics.events import EventKind
from metrics.report import PREDICTED, UNACCOUNTED, LogIndex, accounting, item_latencies

from . import experiments
from .generators import BURSTY, PERIODIC, TRACE, StreamSpec, generate, label_timeline, read_trace
from .harness import Simulation, run_scenario
from .network import DOWN, UP, LinkSpec, StarNetwork
from .scenario import EAGER, LAZY, SCENARIO_ALIASES, SCENARIO_DIR, build_scenario, load_scenario

LAN = {'latency_ms': 0.1, 'bandwidth': 125_000_000}


def small_scenario(**overrides):
    data = {
        'name': 'small',
        'seed': 3,
        'duration_ms': 200,
        'default_link': dict(LAN),
        'streams': [
            {'stream': 'a', 'topic': 'pair', 'node': 'edge0', 'period_ms': 20, 'payload_size': 1024},
            {'stream': 'b', 'topic': 'pair', 'node': 'edge1', 'period_ms': 30, 'start_ms': 5, 'payload_size': 1024},
        ],
        'topics': [{'topic': 'pair', 'streams': ['a', 'b']}],
        'models': [
            {'id': 'adder', 'model': 'sum', 'consumes': 'pair', 'produces': 'total', 'node': 'server', 'cost_ms': 2},
        ],
    }
    data.update(overrides)
    return data


def run(data, seed=None, log_dir=None):
    return run_scenario(build_scenario(data), seed, log_dir)


def join_decisions(events):
    return [e.extra['slots'] for e in events if e.kind == EventKind.JOIN_EMIT]


def predictions(events):
    return [e.extra['value'] for e in events if e.kind == EventKind.PREDICT_PUBLISH]


class GeneratorTests(SimpleTestCase):
    def test_periodic(self):
        spec = StreamSpec('steady', 'T', 'cam', PERIODIC, period=seconds(5))
        schedule = generate(spec, seconds(60))
        self.assertEqual(len(schedule), 12)
        self.assertEqual([ts for ts, _ in schedule][:3], [0, seconds(5), seconds(10)])

    def test_continuous_burst(self):
        spec = StreamSpec('bursty', 'T', 'imu', BURSTY, payload_size=1, burst_rate_hz=10)
        self.assertEqual(len(generate(spec, seconds(60))), 600)

    def test_bursts_with_quiet_gaps(self):
        spec = StreamSpec('bursty', 'T', 'imu', BURSTY, burst_rate_hz=10, burst_length=seconds(1), quiet=seconds(1))
        times = [ts for ts, _ in generate(spec, seconds(10))]
        self.assertEqual(len(times), 50)
        self.assertEqual(times[10], seconds(2))

    def test_trace_rows(self):
        spec = StreamSpec('trace', 'T', 'cam', TRACE, rows=((0, 10), (2.5, 20), (7, 30)))
        self.assertEqual(generate(spec, seconds(1)), [(0, 10), (ms(2.5), 20), (ms(7), 30)])

    def test_trace_file(self):
        with tempfile.NamedTemporaryFile('w', suffix='.csv', delete=False) as fh:
            fh.write('event_ts_ms,payload_size\n0,100\n10,200\n20,300\n')
        try:
            self.assertEqual(read_trace(fh.name), [(0.0, 100), (10.0, 200), (20.0, 300)])
            spec = StreamSpec('trace', 'T', 'cam', TRACE, trace_file=fh.name)
            self.assertEqual(len(generate(spec, seconds(1))), 3)
        finally:
            os.unlink(fh.name)

    def test_nonpositive_period(self):
        with self.assertRaises(ConfigError):
            generate(StreamSpec('s', 'T', 'n', PERIODIC, period=0), seconds(1))

    def test_label_timeline_is_seeded(self):
        first = label_timeline(random.Random(4), seconds(10), (0, 1, 2), ms(400), ms(1200))
        again = label_timeline(random.Random(4), seconds(10), (0, 1, 2), ms(400), ms(1200))
        self.assertEqual(first, again)
        self.assertTrue(all(a[1] != b[1] for a, b in zip(first, first[1:])))


class NetworkTests(SimpleTestCase):
    LINK = LinkSpec(latency=1000, bandwidth=1_000_000)

    def transfers(self, count, **kwargs):
        env = simpy.Environment()
        network = StarNetwork(env, {'a': self.LINK, 'b': self.LINK}, **kwargs)
        done = []

        def move(p2p):
            yield from network.transfer('a', 'b', 1000, p2p=p2p)
            done.append(env.now)

        def sequential():
            for _ in range(count):
                yield from move(True)

        return env, network, done, sequential

    def test_hop_costs_serialization_then_latency(self):
        env = simpy.Environment()
        network = StarNetwork(env, {'a': self.LINK, 'b': self.LINK})
        done = {}

        def move(name):
            yield from network.transfer('a', 'b', 1000)
            done[name] = env.now

        env.process(move('first'))
        env.process(move('second'))
        env.run()
        self.assertEqual(done, {'first': 4000, 'second': 5000})
        self.assertEqual(network.link_bytes('a', UP), 2000)

    def test_ledger_respects_bandwidth(self):
        env = simpy.Environment()
        network = StarNetwork(env, {'a': self.LINK, 'b': self.LINK, 'c': self.LINK})
        for src in ('a', 'c'):
            for _ in range(3):
                env.process(network.transfer(src, 'b', 500))
        env.run()
        hops = [t for t in network.ledger if t.node == 'b' and t.direction == DOWN]
        self.assertEqual(len(hops), 6)
        for earlier, later in zip(hops, hops[1:]):
            self.assertLessEqual(earlier.end, later.start)
        for hop in hops:
            self.assertGreaterEqual(hop.end - hop.start, hop.size * 1_000_000 // self.LINK.bandwidth)

    def test_connection_setup_once_per_pair(self):
        env, _, done, sequential = self.transfers(2, p2p_setup=5000)
        env.process(sequential())
        env.run()
        self.assertEqual(done, [9000, 13000])

    def test_connection_setup_per_fetch(self):
        env, _, done, sequential = self.transfers(2, p2p_setup=5000, setup_per_fetch=True)
        env.process(sequential())
        env.run()
        self.assertEqual(done, [9000, 18000])

    def test_unreachable_node(self):
        network = StarNetwork(simpy.Environment(), {'a': self.LINK})
        with self.assertRaises(UnreachableNode):
            network.check('b')

    def test_default_link(self):
        network = StarNetwork(simpy.Environment(), {}, default_link=self.LINK)
        self.assertEqual(network.link('anywhere'), self.LINK)


class ScenarioTests(SimpleTestCase):
    def test_shipped_scenarios_validate(self):
        names = sorted(name[:-5] for name in os.listdir(SCENARIO_DIR) if name.endswith('.json'))
        for shipped in ('table4_reaction', 'table5_congestion', 'fig6_crossover', 'fig7_scaling', 'fig8_skipping'):
            self.assertIn(shipped, names)
        for name in names:
            scenario = load_scenario(name)
            self.assertEqual(scenario.name, name)

    def test_descriptive_aliases(self):
        for alias, name in SCENARIO_ALIASES.items():
            self.assertEqual(load_scenario(alias).name, name)

    def test_durations_become_microseconds(self):
        scenario = build_scenario(small_scenario(p2p_setup_ms='2ms'))
        self.assertEqual(scenario.duration, ms(200))
        self.assertEqual(scenario.streams[1].start, ms(5))
        self.assertEqual(scenario.p2p_setup, ms(2))
        self.assertEqual(scenario.default_link, LinkSpec(ms(0.1), 125_000_000))

    def test_validation_errors_name_the_field(self):
        data = small_scenario()
        del data['streams'][0]['period_ms']
        with self.assertRaises(ConfigError) as caught:
            build_scenario(data)
        self.assertIn('period_ms', str(caught.exception))

    def test_json_errors_carry_the_line(self):
        with tempfile.NamedTemporaryFile('w', suffix='.json', delete=False) as fh:
            fh.write('{\n  "name": "broken",\n  "seed": ,\n}\n')
        try:
            with self.assertRaises(ConfigError) as caught:
                load_scenario(fh.name)
            self.assertIn(':3:', str(caught.exception))
        finally:
            os.unlink(fh.name)

    def test_stream_on_undeclared_topic(self):
        data = small_scenario()
        data['streams'][0]['topic'] = 'elsewhere'
        with self.assertRaises(InvalidTopology):
            Simulation(build_scenario(data))

    def test_late_fusion_needs_a_chain(self):
        with self.assertRaises(InvalidTopology):
            Simulation(build_scenario(small_scenario(topology='late_fusion')))

    def test_unreachable_node(self):
        data = small_scenario(default_link=None, links=[dict(LAN, node='leader'), dict(LAN, node='edge0')])
        with self.assertRaises(UnreachableNode):
            Simulation(build_scenario(data))


class SimulationTests(SimpleTestCase):
    def test_same_seed_gives_identical_logs(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            run(small_scenario(), log_dir=first)
            run(small_scenario(), log_dir=second)
            names = sorted(os.listdir(first))
            self.assertEqual(names, ['edge0.log', 'edge1.log', 'server.log'])
            _, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
            self.assertEqual((mismatch, errors), ([], []))

    def test_logs_end_with_shutdown(self):
        result = run(small_scenario())
        last = {}
        for event in result.events:
            last[event.node] = event.kind
        self.assertEqual(set(last.values()), {EventKind.SHUTDOWN})

    def test_cost_multiplier(self):
        slow = run(small_scenario(nodes=[{'id': 'server', 'cost_multiplier': 2.5}]))
        self.assertEqual(slow.report.distributions['processing'].median, ms(5))

    def test_lazy_routing_keeps_payloads_off_the_broker(self):
        lazy = run(small_scenario(routing=LAZY))
        eager = run(small_scenario(routing=EAGER))
        self.assertEqual(lazy.report.totals['broker_payload_bytes'], 0)
        self.assertGreater(lazy.report.totals['fetched_bytes'], 0)
        self.assertGreater(eager.report.totals['broker_payload_bytes'], 0)
        self.assertEqual(eager.report.totals['fetched_bytes'], 0)

    def test_lazy_and_eager_assemble_the_same_tuples(self):
        rng = random.Random(11)
        for index in range(100):
            count = rng.randint(2, 4)
            size = rng.choice([8, 64, 4096, 65536])
            streams = [
                {'stream': f's{i}', 'topic': 'mix', 'node': 'edge', 'period_ms': rng.randint(5, 40),
                 'start_ms': rng.randint(0, 20), 'payload_size': size}
                for i in range(count)
            ]
            data = small_scenario(
                name=f'random{index}', seed=index, streams=streams,
                topics=[{'topic': 'mix', 'streams': [s['stream'] for s in streams]}],
                models=[{'id': 'adder', 'model': 'sum', 'consumes': 'mix', 'produces': 'total', 'node': 'server'}],
            )
            lazy = run(dict(data, routing=LAZY))
            eager = run(dict(data, routing=EAGER))
            self.assertEqual(join_decisions(lazy.events), join_decisions(eager.events))
            self.assertEqual(predictions(lazy.events), predictions(eager.events))
            self.assertEqual(lazy.report.totals['broker_payload_bytes'], 0)


class RunInvariantTests(SimpleTestCase):
    """Conservation, latency identities and replay on every shipped scenario shape."""

    SCENARIOS = (
        'table4_reaction', 'fig7_scaling', 'fig8_skipping', 'topology1_activity', 'topology2_activity',
        'topology3_activity', 'delay_tolerance',
    )

    def check(self, result):
        index = LogIndex(result.events)
        outcome = accounting(index)
        self.assertTrue(outcome)
        self.assertNotIn(UNACCOUNTED, outcome.values())
        for item, latency in item_latencies(index).items():
            if latency.total_communication is not None:
                self.assertEqual(latency.total_communication, latency.producer_sending + latency.consumer_receiving)
            if latency.end_to_end is not None:
                self.assertGreaterEqual(latency.end_to_end, latency.total_communication or 0)
                self.assertGreaterEqual(latency.end_to_end, latency.processing or 0)
        self.assertEqual(result.report.violations, [])
        replays = replay_log(result.events)
        self.assertTrue(replays)
        for replay in replays:
            self.assertTrue(replay.ok, replay.divergence and replay.divergence.describe())
            self.assertEqual(replay.logged, replay.replayed)

    def test_shipped_scenarios(self):
        for name in self.SCENARIOS:
            with self.subTest(scenario=name):
                self.check(run_scenario(load_scenario(name)))

    def test_time_triggered_and_hybrid_runs(self):
        for topic in ({'join_mode': 'time_triggered', 'window_ms': 25}, {'join_mode': 'hybrid', 'min_interval_ms': 15}):
            data = small_scenario()
            data['topics'][0].update(topic)
            with self.subTest(mode=topic['join_mode']):
                self.check(run(data))

    def test_skipping_and_fail_soft_runs(self):
        data = small_scenario()
        data['models'][0].update(skip_fraction=0.5, policy='last_known_good')
        data['topics'][0].update(max_skew_ms=12, freshness_threshold_ms=50)
        result = run(data)
        self.check(result)
        self.assertIn('sampled_out', result.report.skipped)

    def test_predicted_items_dominate_a_quiet_run(self):
        result = run(small_scenario())
        self.assertGreater(result.report.skipped[PREDICTED], result.report.skipped.get('warmup', 0))


class ExperimentTests(SimpleTestCase):
    def test_reaction_time_follows_the_window(self):
        medians = experiments.reaction_experiment()
        self.assertTrue(ms(400) <= medians['time_triggered_1000ms'] <= ms(600), medians)
        self.assertTrue(ms(2000) <= medians['time_triggered_5000ms'] <= ms(3000), medians)
        self.assertLess(medians['data_triggered'], 0.1 * medians['time_triggered_1000ms'])

    def test_congested_leader_hurts_eager_routing_only(self):
        result = experiments.congestion_experiment()
        self.assertGreaterEqual(result.degradation(EAGER), 3)
        self.assertLessEqual(result.degradation(LAZY), 1.1)

    def test_routing_crossover(self):
        result = experiments.crossover_experiment()
        self.assertLess(result.latencies[(1024, EAGER)], result.latencies[(1024, LAZY)])
        self.assertLess(result.latencies[(8 * 1024 ** 2, LAZY)], result.latencies[(8 * 1024 ** 2, EAGER)])
        self.assertEqual(result.crossover, 512 * 1024)

    def test_shared_consumers_scale_under_lazy_routing(self):
        lazy = experiments.scaling_experiment(routing=LAZY).speedups
        eager = experiments.scaling_experiment(routing=EAGER).speedups
        self.assertEqual(lazy[1], 1.0)
        self.assertGreaterEqual(lazy[4], 3.2)
        self.assertLessEqual(eager[4], 1.5)

    def test_skipping_saves_bytes_linearly(self):
        for point in experiments.skipping_experiment():
            with self.subTest(fraction=point.fraction):
                self.assertLessEqual(abs(point.fetched_bytes - point.expected_bytes), point.item_bytes)

    def test_backlog_against_the_queueing_oracle(self):
        result = experiments.backlog_experiment()
        scenario = load_scenario('model_backlog')
        period = scenario.streams[0].period
        items = scenario.duration // period
        cost = scenario.models[0].cost
        self.assertLessEqual(abs(result.backlog - result.oracle), 0.1 * result.oracle)
        self.assertLessEqual(abs(result.oracle - items * (cost - period)), 0.1 * items * (cost - period))
        self.assertLessEqual(result.hybrid_backlog, 2 * result.single_item)

    def test_late_fusion_tolerates_a_delayed_stream(self):
        for point in experiments.delay_tolerance_experiment():
            with self.subTest(seed=point.seed):
                self.assertGreater(point.late_fusion, point.early_fusion)

    def test_queueing_oracle(self):
        self.assertEqual(experiments.queueing_oracle([0, 10, 20], 15), [15, 30, 45])
        self.assertEqual(experiments.queueing_oracle([0, 100], 15), [15, 115])

    def test_topology_comparison(self):
        rows = experiments.topology_comparison()
        self.assertEqual(
            [row['topology'] for row in rows.values()],
            ['early_fusion', 'early_fusion_parallel', 'late_fusion'],
        )
        for row in rows.values():
            self.assertTrue(0 < row['accuracy'] <= 1)

    def test_early_fusion_variant(self):
        data = experiments.apply_variant(experiments.scenario_data('delay_tolerance'), 'early_fusion')
        scenario = build_scenario(copy.deepcopy(data))
        self.assertEqual(scenario.topology, 'early_fusion')
        self.assertEqual({s.topic for s in scenario.streams}, {'sensors'})
        counts = defaultdict(int)
        for spec in scenario.streams:
            counts[spec.delay] += 1
        self.assertEqual(counts, {0: 3, ms(60): 1})
