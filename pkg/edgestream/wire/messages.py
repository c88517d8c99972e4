"""Messages carried in wire frames, one dataclass per msg_type."""
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from core.types import Header, PayloadLocator, TopicConfig, validate_name


class MsgType(IntEnum):
    PUBLISH_HEADER = 0
    SUBSCRIBE = 1
    DELIVER = 2
    FETCH_REQUEST = 3
    FETCH_RESPONSE = 4
    ACK = 5
    CREATE_TOPIC = 6
    GAP = 7
    ERROR = 8


class FetchStatus(IntEnum):
    OK = 0
    NOT_FOUND = 1
    EVICTED = 2
    STALE_REJECTED = 3


@dataclass(frozen=True)
class PublishHeader:
    header: Header
    msg_type = MsgType.PUBLISH_HEADER


@dataclass(frozen=True)
class Subscribe:
    topic: str
    consumer_id: str
    shared: bool = False
    msg_type = MsgType.SUBSCRIBE

    def __post_init__(self):
        validate_name(self.topic, 'topic')


@dataclass(frozen=True)
class Deliver:
    sequence: int
    header: Header
    msg_type = MsgType.DELIVER


@dataclass(frozen=True)
class FetchRequest:
    locator: PayloadLocator
    max_age: Optional[int] = None
    msg_type = MsgType.FETCH_REQUEST


@dataclass(frozen=True)
class FetchResponse:
    status: FetchStatus
    payload: bytes = b''
    msg_type = MsgType.FETCH_RESPONSE

    def __post_init__(self):
        object.__setattr__(self, 'status', FetchStatus(self.status))


@dataclass(frozen=True)
class Ack:
    sequence: int
    msg_type = MsgType.ACK


@dataclass(frozen=True)
class CreateTopic:
    config: TopicConfig
    msg_type = MsgType.CREATE_TOPIC


@dataclass(frozen=True)
class Gap:
    topic: str
    from_sequence: int
    to_sequence: int
    msg_type = MsgType.GAP

    def __post_init__(self):
        validate_name(self.topic, 'topic')


@dataclass(frozen=True)
class Error:
    code: str
    message: str
    msg_type = MsgType.ERROR
