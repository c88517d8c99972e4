"""
Offline metric computation over a merged event log.

Latency definitions, per item (topic, stream, event_ts):

    producer sending     produce_begin -> produce_end
    consumer receiving   produce_end -> first broker_deliver (broker queueing included)
    total communication  producer sending + consumer receiving
    processing           model_begin -> model_end of a tuple
    end to end           produce_begin -> first model_end of a tuple holding the item
    reaction time        production -> first later join_emit as new as the item
    queueing time        model_end of a local model -> first join_emit holding its prediction
    total working        first produce_begin -> last model_end
    backlog              end to end latency of the last processed example

Predictions are items too: their ``predict_publish`` event stands in for
``produce_begin`` and its ``origin`` links them to the tuple they came from.
"""
import bisect
import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

from core.exceptions import ContractViolation, IncompleteLog

from .events import EventKind

logger = logging.getLogger(__name__)

PREDICTED = 'predicted'
UNACCOUNTED = 'unaccounted'

LATENCY_METRICS = (
    'producer_sending', 'consumer_receiving', 'total_communication', 'processing', 'end_to_end',
    'reaction_time', 'queueing_time',
)


def nearest_rank(ordered, percent):
    """Nearest-rank percentile of an already sorted sample."""
    if not ordered:
        raise ContractViolation('percentile of an empty sample')
    rank = math.ceil(percent / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class Distribution:
    count: int
    median: int
    p95: int
    p99: int
    min: int
    max: int
    mean: float

    STATISTICS = ('count', 'median', 'p95', 'p99', 'min', 'max', 'mean')

    @classmethod
    def of(cls, values):
        if not values:
            return None
        ordered = sorted(values)
        return cls(
            count=len(ordered),
            median=nearest_rank(ordered, 50),
            p95=nearest_rank(ordered, 95),
            p99=nearest_rank(ordered, 99),
            min=ordered[0],
            max=ordered[-1],
            mean=sum(ordered) / len(ordered),
        )

    def as_dict(self):
        return {name: getattr(self, name) for name in self.STATISTICS}


@dataclass
class ItemLatency:
    producer_sending: Optional[int] = None
    consumer_receiving: Optional[int] = None
    processing: Optional[int] = None
    end_to_end: Optional[int] = None

    @property
    def total_communication(self):
        if self.producer_sending is None or self.consumer_receiving is None:
            return None
        return self.producer_sending + self.consumer_receiving


class LogIndex:
    """First-occurrence lookups over one merged event list."""

    def __init__(self, events):
        self.events = list(events)
        self.produced = {}
        self.produce_end = {}
        self.delivered = {}
        self.deliveries = []
        self.published = {}
        self.skipped = defaultdict(list)
        self.tuples = {}
        self.model_begin = {}
        self.model_end = {}
        self.emits = []
        self.configured = set()
        for event in self.events:
            kind = event.kind
            if kind == EventKind.PRODUCE_BEGIN:
                self.produced.setdefault(event.item, event)
            elif kind == EventKind.PRODUCE_END:
                self.produce_end.setdefault(event.item, event)
            elif kind == EventKind.BROKER_DELIVER:
                self.delivered.setdefault(event.item, event)
                self.deliveries.append(event)
            elif kind == EventKind.PREDICT_PUBLISH:
                self.published.setdefault(event.item, event)
            elif kind == EventKind.SKIP:
                self.skipped[event.item].append(event)
            elif kind == EventKind.JOIN_EMIT:
                self.tuples[self.tuple_key(event)] = event
                self.emits.append(event)
            elif kind == EventKind.MODEL_BEGIN:
                self.model_begin.setdefault(self.tuple_key(event), event)
            elif kind == EventKind.MODEL_END:
                self.model_end.setdefault(self.tuple_key(event), event)
            elif kind == EventKind.TOPIC_CONFIG:
                self.configured.add(event.topic)

    @staticmethod
    def tuple_key(event):
        return (event.node, event.topic, event.seq)

    def slot_items(self, emit):
        return [(emit.topic, stream, ts) for stream, ts in emit.extra.get('slots', [])]

    def origin_of(self, item):
        """The event that brought ``item`` into existence."""
        return self.produced.get(item) or self.published.get(item)

    def first_joins(self):
        """The first join_emit holding each item."""
        first = {}
        for emit in self.emits:
            for item in self.slot_items(emit):
                first.setdefault(item, emit)
        return first

    def completed_tuples(self):
        """(join_emit, model_end) pairs ordered by completion time."""
        pairs = [(self.tuples[key], end) for key, end in self.model_end.items() if key in self.tuples]
        pairs.sort(key=lambda pair: (pair[1].at, pair[1].node))
        return pairs

    def generated_items(self):
        """Every item that some pipeline was configured to consume."""
        items = [item for item in self.produced if item[0] in self.configured]
        items.extend(item for item in self.published if item[0] in self.configured and item not in self.produced)
        return items


def reaction_time(index, emit):
    """join_emit arrival minus production of the tuple's trigger item."""
    trigger = (emit.topic, emit.stream, emit.event_ts)
    origin = index.origin_of(trigger)
    if origin is None:
        raise IncompleteLog(f'no production event for trigger {trigger}')
    return emit.at - origin.at


def item_reaction_times(index):
    """
    Per item: production to the first tuple, on a node that received it,
    whose slot for the item's stream is at least as new as the item. Under
    data triggering that is the tuple the item triggered, so this equals
    ``reaction_time`` of its join; under time triggering it is the close of
    the window the item arrived in, whether the item or a newer one fills
    the slot.
    """
    joins = defaultdict(list)
    for emit in index.emits:
        joins[(emit.node, emit.topic)].append((emit.at, dict(emit.extra.get('slots', []))))
    instants = {key: [at for at, _ in entries] for key, entries in joins.items()}
    times = {}
    for delivery in index.deliveries:
        item = delivery.item
        origin = index.origin_of(item)
        key = (delivery.node, delivery.topic)
        if origin is None or key not in joins:
            continue
        entries = joins[key]
        for position in range(bisect.bisect_left(instants[key], delivery.at), len(entries)):
            at, slots = entries[position]
            ts = slots.get(delivery.stream)
            if ts is not None and ts >= delivery.event_ts:
                value = at - origin.at
                if item not in times or value < times[item]:
                    times[item] = value
                break
    return times


def item_latencies(index):
    latencies = {}
    first_completion = {}
    for emit, end in index.completed_tuples():
        begin = index.model_begin.get(index.tuple_key(end))
        for item in index.slot_items(emit):
            if item not in first_completion:
                first_completion[item] = (begin, end)
    for item in index.generated_items():
        origin = index.origin_of(item)
        latency = ItemLatency()
        produced_end = index.produce_end.get(item)
        delivered = index.delivered.get(item)
        if produced_end is not None:
            latency.producer_sending = produced_end.at - origin.at
            if delivered is not None:
                latency.consumer_receiving = delivered.at - produced_end.at
        completion = first_completion.get(item)
        if completion is not None:
            begin, end = completion
            latency.end_to_end = end.at - origin.at
            if begin is not None:
                latency.processing = end.at - begin.at
        latencies[item] = latency
    return latencies


def queueing_times(index):
    """Per prediction: model_end of its local model to the first join that picks it up."""
    first_join = index.first_joins()
    times = {}
    for item, publish in index.published.items():
        topic, _, _ = publish.extra.get('origin') or (None, None, None)
        end = index.model_end.get((publish.node, topic, publish.extra.get('tuple')))
        emit = first_join.get(item)
        if end is not None and emit is not None:
            times[item] = emit.at - end.at
    return times


def root_production(index, item, limit=64):
    """Follow prediction lineage back to the raw item that started the chain."""
    for _ in range(limit):
        if item in index.produced:
            return index.produced[item]
        publish = index.published.get(item)
        if publish is None or not publish.extra.get('origin'):
            return None
        item = tuple(publish.extra['origin'])
    raise IncompleteLog(f'lineage of {item} does not terminate')


def backlog(index):
    completed = index.completed_tuples()
    if not completed:
        raise IncompleteLog('no tuple reached model_end')
    emit, end = completed[-1]
    root = root_production(index, (emit.topic, emit.stream, emit.event_ts))
    if root is None:
        raise IncompleteLog(f'no production event behind the last tuple of {emit.topic}')
    return end.at - root.at


def total_working_duration(index):
    completed = index.completed_tuples()
    if not index.produced or not completed:
        raise IncompleteLog('run has no production or no completed tuple')
    return completed[-1][1].at - min(event.at for event in index.produced.values())


def accounting(index):
    """Outcome per generated item: predicted, the first skip reason, or unaccounted."""
    predicted = set()
    for emit, _ in index.completed_tuples():
        predicted.update(index.slot_items(emit))
    outcome = {}
    for item in index.generated_items():
        if item in predicted:
            outcome[item] = PREDICTED
        elif index.skipped.get(item):
            outcome[item] = index.skipped[item][0].reason
        else:
            outcome[item] = UNACCOUNTED
    return outcome


@dataclass(frozen=True)
class AccuracyReport:
    accuracy: float
    macro_f1: float
    evaluated: int
    excluded: int
    per_class_f1: dict = field(default_factory=dict)


def label_at(timeline, ts):
    """Label in force at ``ts`` on a sorted step function, or None before the first step."""
    position = bisect.bisect_right([start for start, _ in timeline], ts)
    if position == 0:
        return None
    return timeline[position - 1][1]


def real_time_accuracy(predictions, timeline):
    """
    Score ``(emit_ts, label)`` predictions against the label in force when
    each was emitted. Predictions before the first label are excluded.
    """
    timeline = sorted(timeline)
    starts = [start for start, _ in timeline]
    pairs = []
    excluded = 0
    for emit_ts, predicted in predictions:
        position = bisect.bisect_right(starts, emit_ts)
        if position == 0:
            excluded += 1
            continue
        pairs.append((timeline[position - 1][1], predicted))
    if not pairs:
        raise ContractViolation('real-time accuracy of an empty prediction set is undefined')
    correct = sum(1 for truth, predicted in pairs if truth == predicted)
    per_class = {}
    for label in sorted({truth for truth, _ in pairs} | {predicted for _, predicted in pairs}, key=repr):
        tp = sum(1 for truth, predicted in pairs if truth == label and predicted == label)
        fp = sum(1 for truth, predicted in pairs if truth != label and predicted == label)
        fn = sum(1 for truth, predicted in pairs if truth == label and predicted != label)
        per_class[label] = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    return AccuracyReport(
        accuracy=correct / len(pairs),
        macro_f1=sum(per_class.values()) / len(per_class),
        evaluated=len(pairs),
        excluded=excluded,
        per_class_f1=per_class,
    )


def predictions_from_log(events, topic=None, model=None):
    """``(emit_ts, value)`` of every logged prediction, optionally of one output topic or model."""
    return [
        (event.at, event.extra.get('value'))
        for event in events
        if event.kind == EventKind.PREDICT_PUBLISH
        and (topic is None or event.topic == topic)
        and (model is None or event.extra.get('model') == model)
    ]


@dataclass
class MetricReport:
    distributions: dict
    totals: dict
    skipped: dict
    missing: dict
    total_working_duration: Optional[int] = None
    backlog: Optional[int] = None
    accuracy: Optional[AccuracyReport] = None
    violations: list = field(default_factory=list)

    def rows(self):
        """(metric, statistic, value) rows, the CSV and database shape of a report."""
        rows = []
        for metric in LATENCY_METRICS:
            distribution = self.distributions.get(metric)
            if distribution is None:
                continue
            for statistic, value in distribution.as_dict().items():
                rows.append((metric, statistic, value))
        for metric, value in self.totals.items():
            rows.append((metric, 'total', value))
        for reason, count in sorted(self.skipped.items()):
            rows.append((f'items_{reason}', 'total', count))
        for metric, count in sorted(self.missing.items()):
            rows.append((f'{metric}_missing', 'total', count))
        if self.total_working_duration is not None:
            rows.append(('total_working_duration', 'value', self.total_working_duration))
        if self.backlog is not None:
            rows.append(('backlog', 'value', self.backlog))
        if self.accuracy is not None:
            rows.append(('real_time_accuracy', 'value', self.accuracy.accuracy))
            rows.append(('macro_f1', 'value', self.accuracy.macro_f1))
            rows.append(('accuracy_excluded', 'total', self.accuracy.excluded))
        return rows

    def value(self, metric, statistic='median'):
        for row_metric, row_statistic, value in self.rows():
            if row_metric == metric and row_statistic == statistic:
                return value
        raise KeyError((metric, statistic))

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh)
            writer.writerow(['metric', 'statistic', 'value'])
            writer.writerows(self.rows())


def report(events, timeline=None, accuracy_topic=None):
    """Compute every metric of a run; a pure function of the log."""
    index = LogIndex(events)
    latencies = item_latencies(index)
    samples = defaultdict(list)
    missing = Counter()
    violations = []
    for item, latency in latencies.items():
        for metric in ('producer_sending', 'consumer_receiving', 'total_communication', 'end_to_end'):
            value = getattr(latency, metric)
            if value is None:
                missing[metric] += 1
            else:
                samples[metric].append(value)
        total = latency.total_communication
        if latency.end_to_end is not None:
            if total is not None and latency.end_to_end < total:
                violations.append(f'{item}: end_to_end {latency.end_to_end} < communication {total}')
            if latency.processing is not None and latency.end_to_end < latency.processing:
                violations.append(f'{item}: end_to_end {latency.end_to_end} < processing {latency.processing}')
    for key, end in index.model_end.items():
        begin = index.model_begin.get(key)
        if begin is not None:
            samples['processing'].append(end.at - begin.at)
    reactions = item_reaction_times(index)
    samples['reaction_time'] = list(reactions.values())
    unreacted = sum(1 for item in latencies if item not in reactions)
    if unreacted:
        missing['reaction_time'] = unreacted
    samples['queueing_time'] = list(queueing_times(index).values())

    outcome = accounting(index)
    skipped = Counter(outcome.values())
    if skipped.get(UNACCOUNTED):
        violations.append(f'{skipped[UNACCOUNTED]} items are unaccounted for')

    totals = {
        'broker_frame_bytes': sum(e.extra.get('frame_bytes', 0) for e in index.events if e.kind == EventKind.BROKER_DELIVER),
        'broker_payload_bytes': sum(e.extra.get('payload_bytes', 0) for e in index.events if e.kind == EventKind.BROKER_DELIVER),
        'fetched_bytes': sum(e.extra.get('bytes', 0) for e in index.events if e.kind == EventKind.FETCH_END),
        'generated_items': len(outcome),
        'tuples_emitted': len(index.emits),
        'tuples_completed': len(index.model_end),
    }
    result = MetricReport(
        distributions={metric: Distribution.of(values) for metric, values in samples.items()},
        totals=totals,
        skipped=dict(skipped),
        missing=dict(missing),
        violations=violations,
    )
    if index.model_end and index.produced:
        result.total_working_duration = total_working_duration(index)
        result.backlog = backlog(index)
    if timeline is not None:
        result.accuracy = real_time_accuracy(predictions_from_log(index.events, accuracy_topic), timeline)
    for violation in violations:
        logger.warning('Metric invariant violated: %s', violation)
    return result
