"""
Scenario files: JSON documents validated with DRF serializers.

Durations follow the ``*_ms`` convention of TopicConfig (numbers are
milliseconds, strings may carry a unit). Bandwidths are bytes per second;
``null`` means an uncapped link.
"""
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from rest_framework import serializers

from core.conf import edgestream_setting
from core.exceptions import ConfigError
from core.serializers import DurationField, TopicConfigSerializer, load_validated
from core.types import ms
from runtime.failsoft import FailSoftPolicy
from runtime.operators import MODELS, VALUE

from .generators import (
    BURSTY, PERIODIC, TRACE, VALUES_CONSTANT, VALUES_COUNTER, VALUES_LABEL, StreamSpec,
)
from .network import LinkSpec

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios')

# Descriptive names for the shipped experiment scenarios.
SCENARIO_ALIASES = {
    'reaction_time': 'table4_reaction',
    'leader_congestion': 'table5_congestion',
    'routing_crossover': 'fig6_crossover',
    'consumer_scaling': 'fig7_scaling',
    'input_skipping': 'fig8_skipping',
}

EARLY_FUSION = 'early_fusion'
EARLY_FUSION_PARALLEL = 'early_fusion_parallel'
LATE_FUSION = 'late_fusion'
TOPOLOGIES = (EARLY_FUSION, EARLY_FUSION_PARALLEL, LATE_FUSION)

LAZY = 'lazy'
EAGER = 'eager'


@dataclass(frozen=True)
class NodeSpec:
    id: str
    cost_multiplier: float = 1.0


@dataclass(frozen=True)
class ModelSpec:
    id: str
    model: str
    consumes: str
    produces: str
    nodes: tuple
    output_topic: str = ''
    cost: int = 0
    params: dict = field(default_factory=dict, hash=False)
    shared: bool = False
    policy: str = FailSoftPolicy.DROP_TUPLE.value
    skip_fraction: float = 0
    output_size: int = VALUE.size

    @property
    def output(self):
        return self.output_topic or f'{self.consumes}.predictions'


@dataclass(frozen=True)
class LabelSpec:
    classes: tuple
    min_segment: int
    max_segment: int
    accuracy_topic: Optional[str] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    topology: str
    routing: str
    leader: str
    duration: int
    streams: tuple
    topics: tuple
    models: tuple
    nodes: dict = field(default_factory=dict, hash=False)
    links: dict = field(default_factory=dict, hash=False)
    default_link: Optional[LinkSpec] = None
    labels: Optional[LabelSpec] = None
    p2p_setup: int = 0
    p2p_setup_per_fetch: bool = False
    shared_window: int = 16
    retention: int = 65536
    cache_bytes: int = 256 * 1024 ** 2
    max_drain: int = 600_000_000

    def cost_multiplier(self, node):
        spec = self.nodes.get(node)
        return spec.cost_multiplier if spec else 1.0

    def topic(self, name):
        for config in self.topics:
            if config.topic == name:
                return config
        return None


class LinkSerializer(serializers.Serializer):
    node = serializers.CharField(max_length=255, required=False)
    latency_ms = DurationField(default=0, allow_null=False)
    bandwidth = serializers.IntegerField(min_value=1, allow_null=True, required=False, default=None)

    def create(self, validated_data):
        return LinkSpec(validated_data['latency_ms'], validated_data['bandwidth'])


class NodeSerializer(serializers.Serializer):
    id = serializers.CharField(max_length=255)
    cost_multiplier = serializers.FloatField(min_value=0, default=1.0)


class StreamSpecSerializer(serializers.Serializer):
    stream = serializers.CharField(max_length=255)
    topic = serializers.CharField(max_length=255)
    node = serializers.CharField(max_length=255)
    pattern = serializers.ChoiceField(choices=[PERIODIC, BURSTY, TRACE], default=PERIODIC)
    payload_size = serializers.IntegerField(min_value=0, default=VALUE.size)
    period_ms = DurationField()
    start_ms = DurationField(default=0, allow_null=False)
    delay_ms = DurationField(default=0, allow_null=False)
    quiet_ms = DurationField(default=0, allow_null=False)
    quiet_jitter_ms = DurationField(default=0, allow_null=False)
    burst_rate_hz = serializers.FloatField(min_value=0, required=False, allow_null=True, default=None)
    burst_length_ms = DurationField()
    rows = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2),
        required=False, default=list,
    )
    trace_file = serializers.CharField(required=False, allow_blank=True, default='')
    values = serializers.ChoiceField(choices=[VALUES_COUNTER, VALUES_CONSTANT, VALUES_LABEL], default=VALUES_COUNTER)
    constant = serializers.IntegerField(default=0)
    routing = serializers.ChoiceField(choices=[LAZY, EAGER], required=False, allow_null=True, default=None)

    def validate(self, data):
        pattern = data['pattern']
        if pattern == PERIODIC and not data.get('period_ms'):
            raise serializers.ValidationError({'period_ms': 'A periodic stream needs a positive period.'})
        if pattern == BURSTY and not data.get('burst_rate_hz'):
            raise serializers.ValidationError({'burst_rate_hz': 'A bursty stream needs a positive burst rate.'})
        if pattern == TRACE and not (data.get('rows') or data.get('trace_file')):
            raise serializers.ValidationError({'rows': 'A trace stream needs rows or a trace_file.'})
        return data

    def create(self, validated_data):
        return StreamSpec(
            stream=validated_data['stream'],
            topic=validated_data['topic'],
            node=validated_data['node'],
            pattern=validated_data['pattern'],
            payload_size=validated_data['payload_size'],
            period=validated_data.get('period_ms'),
            start=validated_data['start_ms'],
            delay=validated_data['delay_ms'],
            quiet=validated_data['quiet_ms'],
            quiet_jitter=validated_data['quiet_jitter_ms'],
            burst_rate_hz=validated_data.get('burst_rate_hz'),
            burst_length=validated_data.get('burst_length_ms'),
            rows=tuple((ts, int(size)) for ts, size in validated_data['rows']),
            trace_file=validated_data['trace_file'],
            values=validated_data['values'],
            constant=validated_data['constant'],
            routing=validated_data.get('routing'),
        )


class ModelSpecSerializer(serializers.Serializer):
    id = serializers.CharField(max_length=255)
    model = serializers.ChoiceField(choices=sorted(MODELS))
    consumes = serializers.CharField(max_length=255)
    produces = serializers.CharField(max_length=255)
    output_topic = serializers.CharField(max_length=255, required=False, allow_blank=True, default='')
    node = serializers.CharField(max_length=255, required=False)
    nodes = serializers.ListField(child=serializers.CharField(max_length=255), required=False, allow_empty=False)
    cost_ms = DurationField(default=0, allow_null=False)
    params = serializers.DictField(required=False, default=dict)
    shared = serializers.BooleanField(default=False)
    policy = serializers.ChoiceField(choices=[p.value for p in FailSoftPolicy], default=FailSoftPolicy.DROP_TUPLE.value)
    skip_fraction = serializers.FloatField(min_value=0, max_value=0.999999, default=0)
    output_size = serializers.IntegerField(min_value=VALUE.size, default=VALUE.size)

    def validate(self, data):
        nodes = data.get('nodes') or ([data['node']] if data.get('node') else [])
        if not nodes:
            raise serializers.ValidationError({'nodes': 'A model needs a node or a list of nodes.'})
        if len(set(nodes)) != len(nodes):
            raise serializers.ValidationError({'nodes': 'Instances of one model must run on distinct nodes.'})
        if len(nodes) > 1 and not data['shared']:
            raise serializers.ValidationError({'shared': 'Several instances of a model must share the topic.'})
        data['nodes'] = nodes
        return data

    def create(self, validated_data):
        return ModelSpec(
            id=validated_data['id'],
            model=validated_data['model'],
            consumes=validated_data['consumes'],
            produces=validated_data['produces'],
            nodes=tuple(validated_data['nodes']),
            output_topic=validated_data['output_topic'],
            cost=validated_data['cost_ms'],
            params=validated_data['params'],
            shared=validated_data['shared'],
            policy=validated_data['policy'],
            skip_fraction=validated_data['skip_fraction'],
            output_size=validated_data['output_size'],
        )


class LabelSpecSerializer(serializers.Serializer):
    classes = serializers.ListField(child=serializers.IntegerField(), allow_empty=False)
    min_segment_ms = DurationField(allow_null=False, required=True)
    max_segment_ms = DurationField(allow_null=False, required=True)
    accuracy_topic = serializers.CharField(required=False, allow_null=True, default=None)

    def validate(self, data):
        if data['min_segment_ms'] <= 0 or data['max_segment_ms'] < data['min_segment_ms']:
            raise serializers.ValidationError('Label segments need 0 < min_segment_ms <= max_segment_ms.')
        return data


class ScenarioSerializer(serializers.Serializer):
    name = serializers.CharField(max_length=255)
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=0)
    topology = serializers.ChoiceField(choices=TOPOLOGIES, default=EARLY_FUSION)
    routing = serializers.ChoiceField(choices=[LAZY, EAGER], default=LAZY)
    leader = serializers.CharField(max_length=255, default='leader')
    duration_ms = DurationField(allow_null=False, required=True)
    nodes = NodeSerializer(many=True, required=False, default=list)
    links = LinkSerializer(many=True, required=False, default=list)
    default_link = LinkSerializer(required=False, allow_null=True, default=None)
    streams = StreamSpecSerializer(many=True, allow_empty=False)
    topics = TopicConfigSerializer(many=True, allow_empty=False)
    models = ModelSpecSerializer(many=True, allow_empty=False)
    labels = LabelSpecSerializer(required=False, allow_null=True, default=None)
    p2p_setup_ms = DurationField()
    p2p_setup_per_fetch = serializers.BooleanField(default=False)
    shared_window = serializers.IntegerField(min_value=1, required=False)
    retention = serializers.IntegerField(min_value=1, required=False)
    cache_bytes = serializers.IntegerField(min_value=0, required=False)
    max_drain_ms = DurationField(allow_null=False, default=ms(600_000))

    def validate_duration_ms(self, value):
        if not value:
            raise serializers.ValidationError('A scenario needs a positive duration.')
        return value

    def validate_links(self, value):
        if any(not link.get('node') for link in value):
            raise serializers.ValidationError('Every link names the node it attaches.')
        return value

    def validate(self, data):
        for key, label in (('streams', 'stream'), ('topics', 'topic'), ('models', 'id')):
            names = [entry[label] for entry in data[key]]
            if len(set(names)) != len(names):
                raise serializers.ValidationError({key: f'Duplicate {label} names.'})
        return data

    def create(self, validated_data):
        data = validated_data
        p2p_setup = data.get('p2p_setup_ms')
        return Scenario(
            name=data['name'],
            seed=data['seed'],
            topology=data['topology'],
            routing=data['routing'],
            leader=data['leader'],
            duration=data['duration_ms'],
            streams=tuple(StreamSpecSerializer().create(s) for s in data['streams']),
            topics=tuple(TopicConfigSerializer().create(t) for t in data['topics']),
            models=tuple(ModelSpecSerializer().create(m) for m in data['models']),
            nodes={n['id']: NodeSpec(n['id'], n['cost_multiplier']) for n in data['nodes']},
            links={link['node']: LinkSerializer().create(link) for link in data['links']},
            default_link=LinkSerializer().create(data['default_link']) if data.get('default_link') else None,
            labels=self._labels(data.get('labels')),
            p2p_setup=ms(edgestream_setting('P2P_SETUP_MS')) if p2p_setup is None else p2p_setup,
            p2p_setup_per_fetch=data['p2p_setup_per_fetch'],
            shared_window=data.get('shared_window', edgestream_setting('SHARED_WINDOW')),
            retention=data.get('retention', edgestream_setting('BROKER_RETENTION')),
            cache_bytes=data.get('cache_bytes', edgestream_setting('FETCH_CACHE_BYTES')),
            max_drain=data['max_drain_ms'],
        )

    @staticmethod
    def _labels(data):
        if not data:
            return None
        return LabelSpec(
            classes=tuple(data['classes']),
            min_segment=data['min_segment_ms'],
            max_segment=data['max_segment_ms'],
            accuracy_topic=data.get('accuracy_topic'),
        )


def build_scenario(data, source='scenario'):
    return load_validated(ScenarioSerializer, data, source)


def resolve_path(name):
    """Accept a path or the name of a shipped scenario."""
    if os.path.exists(name):
        return name
    name = SCENARIO_ALIASES.get(name, name)
    candidate = os.path.join(SCENARIO_DIR, name if name.endswith('.json') else f'{name}.json')
    if os.path.exists(candidate):
        return candidate
    raise ConfigError(f'no scenario file {name!r}')


def read_scenario_data(name):
    path = resolve_path(name)
    with open(path, encoding='utf-8') as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path}:{exc.lineno}:{exc.colno}: {exc.msg}') from exc


def load_scenario(name, **overrides):
    """Read, override top-level keys, and validate a scenario file."""
    data = read_scenario_data(name)
    data.update(overrides)
    return build_scenario(data, resolve_path(name))
