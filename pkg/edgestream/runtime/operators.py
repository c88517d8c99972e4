"""
Model operators: stream in, stream out.

A model is a deterministic function of the assembled tuple (payloads in
the topic's stream order, ``None`` for an abstaining slot) plus a declared
inference cost used by the simulator. Numeric payloads carry a signed
64-bit little-endian value in their first eight bytes.
"""
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Union

from core.exceptions import ConfigError, ContractViolation, ModelError

VALUE = struct.Struct('<q')


def encode_value(value, size=VALUE.size):
    try:
        raw = VALUE.pack(value)
    except struct.error as exc:
        raise ModelError(f'prediction {value!r} is not a 64-bit integer') from exc
    return raw + bytes(max(size - VALUE.size, 0))


def decode_value(payload):
    if payload is None or len(payload) < VALUE.size:
        raise ModelError(f'payload of {0 if payload is None else len(payload)} bytes carries no value')
    return VALUE.unpack_from(payload)[0]


@dataclass(frozen=True)
class Prediction:
    value: Union[int, bytes]
    source_model: str
    input_trigger_ts: int
    emit_ts: int

    def __post_init__(self):
        if self.emit_ts < self.input_trigger_ts:
            raise ContractViolation(f'prediction emitted at {self.emit_ts} before its trigger {self.input_trigger_ts}')

    def payload(self, size=VALUE.size):
        if isinstance(self.value, bytes):
            return self.value
        return encode_value(self.value, size)


@dataclass(frozen=True)
class ModelOperator:
    id: str
    consumes: str
    produces: str
    apply: Callable = field(compare=False)
    declared_cost: int = 0
    output_topic: str = ''
    output_size: int = VALUE.size

    def __post_init__(self):
        if self.declared_cost < 0:
            raise ConfigError(f'model {self.id!r} declares a negative cost')
        if not self.output_topic:
            object.__setattr__(self, 'output_topic', f'{self.consumes}.predictions')

    def invoke(self, joined):
        payloads = [None if slot.missing else slot.payload for slot in joined.slots]
        try:
            return self.apply(payloads)
        except ModelError:
            raise
        except Exception as exc:
            raise ModelError(f'model {self.id!r} failed: {exc}') from exc


def identity(payloads):
    if len(payloads) == 1:
        return payloads[0]
    return b''.join(p or b'' for p in payloads)


def total(payloads):
    return sum(decode_value(p) for p in payloads if p is not None)


def threshold_label(threshold=0):
    def apply(payloads):
        return 1 if total(payloads) > threshold else 0
    return apply


def diagonal(labels, width):
    """Table that maps a unanimous tuple to its label."""
    return {(label,) * width: label for label in labels}


def unpack_values(payload):
    """Every eight-byte word of a packed payload, as written by the identity model over a tuple."""
    if payload is None or not payload or len(payload) % VALUE.size:
        raise ModelError(f'packed payload of {0 if payload is None else len(payload)} bytes is not whole values')
    return [value for (value,) in VALUE.iter_unpack(payload)]


def table_lookup(table, default=-1, packed=False):
    def apply(payloads):
        if packed:
            key = tuple(v for p in payloads if p is not None for v in unpack_values(p))
        else:
            key = tuple(decode_value(p) for p in payloads if p is not None)
        return table.get(key, default)
    return apply


def majority_vote(labels):
    """Modal label; ties go to the label seen first in slot order. ``None`` abstains."""
    votes = [label for label in labels if label is not None]
    if not votes:
        raise ModelError('majority vote over an empty ballot')
    counts = Counter(votes)
    best = max(counts.values())
    for label in votes:
        if counts[label] == best:
            return label


def vote(payloads):
    return majority_vote([None if p is None else decode_value(p) for p in payloads])


def _identity_factory(**params):
    return identity


def _sum_factory(**params):
    return total


def _table_factory(table=None, diagonal_labels=None, width=None, default=-1, packed=False):
    if table is None and diagonal_labels is None:
        raise ConfigError('table_lookup needs a table or diagonal_labels')
    lookup = {}
    for key, label in (table or []):
        lookup[tuple(key)] = label
    if diagonal_labels is not None:
        if not width:
            raise ConfigError('diagonal table_lookup needs the tuple width')
        lookup.update(diagonal(diagonal_labels, width))
    return table_lookup(lookup, default, packed)


def _vote_factory(**params):
    return vote


MODELS = {
    'identity': _identity_factory,
    'sum': _sum_factory,
    'threshold_label': threshold_label,
    'table_lookup': _table_factory,
    'majority_vote': _vote_factory,
}


def build_model(name, model_id, consumes, produces, cost=0, output_topic='', params=None, output_size=VALUE.size):
    try:
        factory = MODELS[name]
    except KeyError:
        raise ConfigError(f'unknown model {name!r}; choose one of {", ".join(sorted(MODELS))}') from None
    try:
        apply = factory(**(params or {}))
    except TypeError as exc:
        raise ConfigError(f'bad parameters for model {name!r}: {exc}') from exc
    return ModelOperator(model_id, consumes, produces, apply, cost, output_topic, output_size)
