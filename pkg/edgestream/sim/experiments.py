"""
Experiment drivers.

Each driver loads a shipped scenario, runs it under the variations being
compared and returns the numbers the comparison is about. Durations are
microseconds; speedups and ratios are plain floats.
"""
import copy
import logging
from dataclasses import dataclass, field

from core.types import JoinMode
from metrics.events import EventKind

from .harness import run_scenario
from .scenario import EAGER, LAZY, build_scenario, read_scenario_data

logger = logging.getLogger(__name__)


def scenario_data(name):
    return copy.deepcopy(read_scenario_data(name))


def edit_topic(data, topic, **changes):
    for entry in data['topics']:
        if entry['topic'] == topic:
            entry.update(changes)
            return data
    raise KeyError(topic)


def edit_model(data, model_id, **changes):
    for entry in data['models']:
        if entry['id'] == model_id:
            entry.update(changes)
            return data
    raise KeyError(model_id)


def run_data(data, seed=None, log_dir=None):
    return run_scenario(build_scenario(data, data.get('name', 'scenario')), seed, log_dir)


def apply_variant(data, variant):
    """Overlay a named variant of a scenario file (e.g. its early-fusion twin)."""
    overrides = copy.deepcopy(data['variants'][variant])
    stream_topic = overrides.pop('stream_topic', None)
    data = copy.deepcopy(data)
    data.update(overrides)
    if stream_topic:
        for stream in data['streams']:
            stream['topic'] = stream_topic
    return data


# -- reaction time --

def reaction_experiment(name='table4_reaction', windows_ms=(1000, 5000), seed=None):
    """Median per-item reaction time under data triggering and each time-triggered window."""
    base = scenario_data(name)
    topic = base['topics'][0]['topic']
    medians = {}
    data = copy.deepcopy(base)
    edit_topic(data, topic, join_mode=JoinMode.DATA_TRIGGERED.value)
    medians[JoinMode.DATA_TRIGGERED.value] = run_data(data, seed).report.value('reaction_time')
    for window in windows_ms:
        data = copy.deepcopy(base)
        edit_topic(data, topic, join_mode=JoinMode.TIME_TRIGGERED.value, window_ms=window)
        medians[f'time_triggered_{window}ms'] = run_data(data, seed).report.value('reaction_time')
    logger.info('Reaction medians: %s', medians)
    return medians


# -- congestion --

@dataclass
class CongestionResult:
    durations: dict = field(default_factory=dict)

    def degradation(self, routing):
        return self.durations[(routing, True)] / self.durations[(routing, False)]


def congestion_experiment(name='table5_congestion', seed=None):
    """Total working duration per (routing, leader capped)."""
    base = scenario_data(name)
    result = CongestionResult()
    for routing in (EAGER, LAZY):
        for capped in (False, True):
            data = copy.deepcopy(base)
            data['routing'] = routing
            data['links'] = [base['capped_leader_link']] if capped else []
            result.durations[(routing, capped)] = run_data(data, seed).report.total_working_duration
    logger.info('Congestion durations: %s', result.durations)
    return result


# -- routing crossover --

@dataclass
class CrossoverResult:
    latencies: dict = field(default_factory=dict)

    @property
    def crossover(self):
        """Smallest payload size at which lazy routing beats eager routing."""
        for size in sorted({size for size, _ in self.latencies}):
            if self.latencies[(size, LAZY)] < self.latencies[(size, EAGER)]:
                return size
        return None


DEFAULT_SIZES = (1024, 16 * 1024, 128 * 1024, 512 * 1024, 2 * 1024 ** 2, 8 * 1024 ** 2)


def crossover_experiment(name='fig6_crossover', sizes=DEFAULT_SIZES, seed=None):
    """Median end-to-end latency per (payload size, routing)."""
    base = scenario_data(name)
    result = CrossoverResult()
    for size in sizes:
        for routing in (EAGER, LAZY):
            data = copy.deepcopy(base)
            data['routing'] = routing
            for stream in data['streams']:
                stream['payload_size'] = size
            result.latencies[(size, routing)] = run_data(data, seed).report.value('end_to_end')
    logger.info('Crossover at %s bytes', result.crossover)
    return result


# -- parallel scaling --

@dataclass
class ScalingResult:
    routing: str
    durations: dict = field(default_factory=dict)

    @property
    def speedups(self):
        baseline = self.durations[min(self.durations)]
        return {k: baseline / duration for k, duration in sorted(self.durations.items())}


def scaling_experiment(name='fig7_scaling', consumers=(1, 2, 3, 4), routing=LAZY, seed=None):
    """Total working duration with k shared consumers, normalized to the smallest k."""
    base = scenario_data(name)
    model_id = base['models'][0]['id']
    result = ScalingResult(routing)
    for k in consumers:
        data = copy.deepcopy(base)
        data['routing'] = routing
        edit_model(data, model_id, nodes=[f'worker{i}' for i in range(1, k + 1)], shared=True)
        result.durations[k] = run_data(data, seed).report.total_working_duration
    logger.info('%s scaling speedups: %s', routing, result.speedups)
    return result


# -- data skipping --

@dataclass(frozen=True)
class SkippingPoint:
    fraction: float
    fetched_bytes: int
    total_bytes: int
    item_bytes: int

    @property
    def expected_bytes(self):
        return (1 - self.fraction) * self.total_bytes


def skipping_experiment(name='fig8_skipping', fractions=(0, 0.25, 0.5, 0.75), seed=None):
    base = scenario_data(name)
    model_id = base['models'][0]['id']
    points = []
    for fraction in fractions:
        data = copy.deepcopy(base)
        edit_model(data, model_id, skip_fraction=fraction)
        result = run_data(data, seed)
        produced = [e.extra['size'] for e in result.events if e.kind == EventKind.PRODUCE_BEGIN]
        points.append(SkippingPoint(fraction, result.report.totals['fetched_bytes'], sum(produced), max(produced)))
    return points


# -- backlog --

def queueing_oracle(arrivals, cost):
    """Completion times of a FIFO single server with constant service time."""
    finished = []
    free_at = None
    for arrival in sorted(arrivals):
        start = arrival if free_at is None else max(arrival, free_at)
        free_at = start + cost
        finished.append(free_at)
    return finished


@dataclass(frozen=True)
class BacklogResult:
    backlog: int
    oracle: int
    hybrid_backlog: int
    single_item: int


def backlog_experiment(name='model_backlog', seed=None):
    """Backlog without rate control against the FIFO oracle, and with a hybrid throttle."""
    base = scenario_data(name)
    topic = base['topics'][0]['topic']
    model = base['models'][0]
    cost = build_scenario(base).models[0].cost

    unthrottled = run_data(copy.deepcopy(base), seed)
    produced = sorted(e.event_ts for e in unthrottled.events if e.kind == EventKind.PRODUCE_BEGIN)
    communication = unthrottled.report.value('total_communication')
    finished = queueing_oracle([ts + communication for ts in produced], cost)
    oracle = finished[-1] - produced[-1]

    throttled = copy.deepcopy(base)
    edit_topic(throttled, topic, join_mode=JoinMode.HYBRID.value, min_interval_ms=model['cost_ms'])
    hybrid = run_data(throttled, seed)

    single = copy.deepcopy(base)
    single['duration_ms'] = 1
    single_item = run_data(single, seed).report.value('end_to_end')
    return BacklogResult(unthrottled.report.backlog, oracle, hybrid.report.backlog, single_item)


# -- accuracy under delay --

@dataclass(frozen=True)
class AccuracyPoint:
    seed: int
    late_fusion: float
    early_fusion: float


def delay_tolerance_experiment(name='delay_tolerance', seeds=(1, 2, 3, 4, 5)):
    """Real-time accuracy of late and early fusion on the same labeled, delayed trace."""
    base = scenario_data(name)
    early = apply_variant(base, 'early_fusion')
    points = []
    for seed in seeds:
        late_accuracy = run_data(copy.deepcopy(base), seed).report.accuracy.accuracy
        early_accuracy = run_data(copy.deepcopy(early), seed).report.accuracy.accuracy
        points.append(AccuracyPoint(seed, late_accuracy, early_accuracy))
        logger.info('Seed %d: late %.3f, early %.3f', seed, late_accuracy, early_accuracy)
    return points


TOPOLOGY_SCENARIOS = ('topology1_activity', 'topology2_activity', 'topology3_activity')


def topology_comparison(names=TOPOLOGY_SCENARIOS, seed=None):
    """Accuracy and latency of the same activity trace on each topology."""
    rows = {}
    for name in names:
        result = run_data(scenario_data(name), seed)
        rows[name] = {
            'topology': result.scenario.topology,
            'accuracy': result.report.accuracy.accuracy,
            'macro_f1': result.report.accuracy.macro_f1,
            'end_to_end': result.report.value('end_to_end'),
            'total_working_duration': result.report.total_working_duration,
        }
    return rows


EXPERIMENTS = {
    'reaction': reaction_experiment,
    'congestion': congestion_experiment,
    'crossover': crossover_experiment,
    'scaling': scaling_experiment,
    'skipping': skipping_experiment,
    'backlog': backlog_experiment,
    'delay_tolerance': delay_tolerance_experiment,
    'topologies': topology_comparison,
}
