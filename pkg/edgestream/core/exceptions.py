"""
Exception hierarchy shared by every edgestream app.

Each error carries a stable ``code`` so that the REST exception handler,
the wire ``Error`` frame and the CLI exit-code mapping agree on one name.
"""


class EdgeStreamError(Exception):
    code = 'edgestream_error'

    def __init__(self, message='', **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details


class ContractViolation(EdgeStreamError):
    """A precondition of an operation was not met by the caller."""
    code = 'contract_violation'


class ConfigError(EdgeStreamError):
    code = 'config_error'


# --- wire ---

class EncodingError(EdgeStreamError):
    code = 'encoding_error'


class DecodeError(EdgeStreamError):
    code = 'decode_error'


class TruncatedFrame(DecodeError):
    code = 'truncated_frame'


class UnsupportedVersion(DecodeError):
    code = 'unsupported_version'


class UnknownMessageType(DecodeError):
    code = 'unknown_message_type'


class MalformedString(DecodeError):
    code = 'malformed_string'


class TrailingBytes(DecodeError):
    code = 'trailing_bytes'


# --- broker ---

class BrokerError(EdgeStreamError):
    code = 'broker_error'


class DuplicateTopic(BrokerError):
    code = 'duplicate_topic'


class UnknownTopic(BrokerError):
    code = 'unknown_topic'


class UnknownStream(BrokerError):
    code = 'unknown_stream'


class DuplicateConsumer(BrokerError):
    code = 'duplicate_consumer'


class FrameTooLarge(BrokerError):
    code = 'frame_too_large'


# --- store ---

class StoreError(EdgeStreamError):
    code = 'store_error'


class NotFound(StoreError):
    code = 'not_found'


class Evicted(StoreError):
    code = 'evicted'


class StaleRejected(StoreError):
    code = 'stale_rejected'


class StorageFull(StoreError):
    code = 'storage_full'


class TransportFailure(StoreError):
    code = 'transport_failure'


# --- runtime / metrics / sim / cli ---

class ModelError(EdgeStreamError):
    code = 'model_error'


class IncompleteLog(EdgeStreamError):
    code = 'incomplete_log'


class SimulationError(EdgeStreamError):
    code = 'simulation_error'


class InvalidTopology(SimulationError):
    code = 'invalid_topology'


class UnreachableNode(SimulationError):
    code = 'unreachable_node'


class ReplayDivergence(EdgeStreamError):
    code = 'replay_divergence'


BROKER_ERRORS = {cls.code: cls for cls in (
    BrokerError, DuplicateTopic, UnknownTopic, UnknownStream, DuplicateConsumer, FrameTooLarge,
)}
