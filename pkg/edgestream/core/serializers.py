from rest_framework import serializers

from .exceptions import ConfigError
from .types import JoinMode, TimeBasis, TopicConfig, parse_duration
from .utils import flatten_errors


class DurationField(serializers.Field):
    """
    Duration given in milliseconds (number) or with a unit suffix ("5s",
    "250us"). Stored as integer microseconds; null means unlimited.
    """
    default_error_messages = {
        'invalid': 'Enter a duration such as 500, "500ms" or "5s".',
        'negative': 'Duration must not be negative.',
    }

    def __init__(self, **kwargs):
        if kwargs.get('required'):
            kwargs.setdefault('allow_null', False)
        else:
            kwargs.setdefault('required', False)
            kwargs.setdefault('allow_null', True)
            kwargs.setdefault('default', None)
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        try:
            value = parse_duration(data)
        except ConfigError:
            self.fail('invalid')
        if value is not None and value < 0:
            self.fail('negative')
        return value

    def to_representation(self, value):
        return None if value is None else value / 1_000


class TopicConfigSerializer(serializers.Serializer):
    topic = serializers.CharField(max_length=255)
    streams = serializers.ListField(child=serializers.CharField(max_length=255), allow_empty=False)
    join_mode = serializers.ChoiceField(choices=[m.value for m in JoinMode], default=JoinMode.DATA_TRIGGERED.value)
    window_ms = DurationField()
    min_interval_ms = DurationField()
    max_skew_ms = DurationField()
    freshness_threshold_ms = DurationField()
    target_prediction_frequency_ms = DurationField()
    time_basis = serializers.ChoiceField(choices=[b.value for b in TimeBasis], default=TimeBasis.EVENT_TIME.value)

    def validate_streams(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError('Streams must not repeat.')
        return value

    def validate(self, data):
        mode = data.get('join_mode')
        if mode == JoinMode.TIME_TRIGGERED.value and not data.get('window_ms'):
            raise serializers.ValidationError({'window_ms': 'A time_triggered join needs a positive window.'})
        if mode == JoinMode.HYBRID.value and data.get('min_interval_ms') is None:
            raise serializers.ValidationError({'min_interval_ms': 'A hybrid join needs min_interval_ms.'})
        return data

    def create(self, validated_data):
        return TopicConfig(
            topic=validated_data['topic'],
            streams=tuple(validated_data['streams']),
            join_mode=validated_data['join_mode'],
            window=validated_data.get('window_ms'),
            min_interval=validated_data.get('min_interval_ms'),
            max_skew=validated_data.get('max_skew_ms'),
            freshness_threshold=validated_data.get('freshness_threshold_ms'),
            target_prediction_frequency=validated_data.get('target_prediction_frequency_ms'),
            time_basis=validated_data['time_basis'],
        )


def load_validated(serializer_class, data, source='config'):
    """Validate ``data`` and build the domain object, raising ConfigError on failure."""
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise ConfigError(
            f'Invalid {source}: ' + '; '.join(flatten_errors(serializer.errors)),
            errors=serializer.errors,
        )
    return serializer.save()
