"""
Bit-exact frame codec.

    u32 length | u8 version | u8 msg_type | body

``length`` counts the bytes after itself (body + 2). All integers are
little-endian and fixed width; strings are a u16 byte count followed by
UTF-8. Unlimited durations are encoded as 0xFFFFFFFFFFFFFFFF.
"""
import struct

from core.exceptions import (
    ConfigError, ContractViolation, DecodeError, EncodingError, MalformedString, TrailingBytes, TruncatedFrame,
    UnknownMessageType, UnsupportedVersion,
)
from core.types import DEFAULT_MAX_PAYLOAD_BYTES, Header, JoinMode, PayloadLocator, TimeBasis, TopicConfig

from .messages import (
    Ack, CreateTopic, Deliver, Error, FetchRequest, FetchResponse, Gap, MsgType,
    PublishHeader, Subscribe,
)

VERSION = 1
LENGTH = struct.Struct('<I')
PREAMBLE = struct.Struct('<BB')
U8 = struct.Struct('<B')
U16 = struct.Struct('<H')
U32 = struct.Struct('<I')
U64 = struct.Struct('<Q')
NONE_U64 = 0xFFFF_FFFF_FFFF_FFFF

BODY_LAZY = 0
BODY_INLINE = 1

_JOIN_MODES = [JoinMode.TIME_TRIGGERED, JoinMode.DATA_TRIGGERED, JoinMode.HYBRID, JoinMode.APPROXIMATE_TIME]
_TIME_BASES = [TimeBasis.EVENT_TIME, TimeBasis.PROCESSING_TIME]


class _Writer:
    def __init__(self, max_payload):
        self.buf = bytearray()
        self.max_payload = max_payload

    def pack(self, fmt, value):
        try:
            self.buf += fmt.pack(value)
        except struct.error as exc:
            raise EncodingError(f'value {value!r} does not fit: {exc}') from exc

    def u8(self, value):
        self.pack(U8, value)

    def u16(self, value):
        self.pack(U16, value)

    def u32(self, value):
        self.pack(U32, value)

    def u64(self, value):
        self.pack(U64, value)

    def opt_u64(self, value):
        if value is not None and value >= NONE_U64:
            raise EncodingError(f'duration {value} collides with the unlimited marker')
        self.u64(NONE_U64 if value is None else value)

    def string(self, value):
        raw = value.encode('utf-8')
        if len(raw) > 0xFFFF:
            raise EncodingError(f'string of {len(raw)} bytes is too long')
        self.u16(len(raw))
        self.buf += raw

    def blob(self, value):
        if len(value) > self.max_payload:
            raise EncodingError(f'payload of {len(value)} bytes exceeds {self.max_payload}')
        self.u32(len(value))
        self.buf += value

    def locator(self, loc):
        self.string(loc.host)
        self.u16(loc.port)
        self.u64(loc.segment)
        self.u64(loc.offset)
        self.u32(loc.length)

    def header(self, header):
        self.string(header.topic)
        self.string(header.stream)
        self.u64(header.event_ts)
        self.u64(header.publish_ts)
        if header.is_lazy:
            self.u8(BODY_LAZY)
            self.locator(header.locator)
        else:
            self.u8(BODY_INLINE)
            self.blob(header.inline)

    def topic_config(self, config):
        self.string(config.topic)
        self.u16(len(config.streams))
        for stream in config.streams:
            self.string(stream)
        self.u8(_JOIN_MODES.index(config.join_mode))
        if config.join_mode == JoinMode.TIME_TRIGGERED:
            self.u64(config.window)
        elif config.join_mode == JoinMode.HYBRID:
            self.u64(config.min_interval)
        else:
            self.u64(0)
        self.opt_u64(config.max_skew)
        self.opt_u64(config.freshness_threshold)
        self.opt_u64(config.target_prediction_frequency)
        self.u8(_TIME_BASES.index(config.time_basis))


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, size):
        end = self.pos + size
        if end > len(self.data):
            raise TruncatedFrame(f'need {size} bytes at offset {self.pos}, frame has {len(self.data)}')
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt):
        return fmt.unpack(self.take(fmt.size))[0]

    def u8(self):
        return self.unpack(U8)

    def u16(self):
        return self.unpack(U16)

    def u32(self):
        return self.unpack(U32)

    def u64(self):
        return self.unpack(U64)

    def opt_u64(self):
        value = self.u64()
        return None if value == NONE_U64 else value

    def flag(self):
        value = self.u8()
        if value not in (0, 1):
            raise DecodeError(f'boolean byte must be 0 or 1, got {value}')
        return bool(value)

    def string(self):
        raw = bytes(self.take(self.u16()))
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError as exc:
            raise MalformedString(f'invalid UTF-8 at offset {self.pos - len(raw)}') from exc

    def blob(self):
        return bytes(self.take(self.u32()))

    def locator(self):
        return PayloadLocator(
            host=self.string(), port=self.u16(), segment=self.u64(), offset=self.u64(), length=self.u32(),
        )

    def header(self):
        topic = self.string()
        stream = self.string()
        event_ts = self.u64()
        publish_ts = self.u64()
        mode = self.u8()
        if mode == BODY_LAZY:
            return Header(topic, stream, event_ts, publish_ts, locator=self.locator())
        if mode == BODY_INLINE:
            return Header(topic, stream, event_ts, publish_ts, inline=self.blob())
        raise DecodeError(f'unknown header body mode {mode}')

    def topic_config(self):
        topic = self.string()
        streams = tuple(self.string() for _ in range(self.u16()))
        mode_index = self.u8()
        if mode_index >= len(_JOIN_MODES):
            raise DecodeError(f'unknown join mode {mode_index}')
        mode = _JOIN_MODES[mode_index]
        param = self.u64()
        max_skew = self.opt_u64()
        freshness = self.opt_u64()
        frequency = self.opt_u64()
        basis_index = self.u8()
        if basis_index >= len(_TIME_BASES):
            raise DecodeError(f'unknown time basis {basis_index}')
        return TopicConfig(
            topic=topic,
            streams=streams,
            join_mode=mode,
            window=param if mode == JoinMode.TIME_TRIGGERED else None,
            min_interval=param if mode == JoinMode.HYBRID else None,
            max_skew=max_skew,
            freshness_threshold=freshness,
            target_prediction_frequency=frequency,
            time_basis=_TIME_BASES[basis_index],
        )


def _encode_body(message, w):
    if isinstance(message, PublishHeader):
        w.header(message.header)
    elif isinstance(message, Subscribe):
        w.string(message.topic)
        w.string(message.consumer_id)
        w.u8(1 if message.shared else 0)
    elif isinstance(message, Deliver):
        w.u64(message.sequence)
        w.header(message.header)
    elif isinstance(message, FetchRequest):
        w.locator(message.locator)
        w.opt_u64(message.max_age)
    elif isinstance(message, FetchResponse):
        w.u8(int(message.status))
        w.blob(message.payload)
    elif isinstance(message, Ack):
        w.u64(message.sequence)
    elif isinstance(message, CreateTopic):
        w.topic_config(message.config)
    elif isinstance(message, Gap):
        w.string(message.topic)
        w.u64(message.from_sequence)
        w.u64(message.to_sequence)
    elif isinstance(message, Error):
        w.string(message.code)
        w.string(message.message)
    else:
        raise EncodingError(f'not a wire message: {type(message).__name__}')


def _decode_body(msg_type, r):
    if msg_type == MsgType.PUBLISH_HEADER:
        return PublishHeader(r.header())
    if msg_type == MsgType.SUBSCRIBE:
        return Subscribe(r.string(), r.string(), r.flag())
    if msg_type == MsgType.DELIVER:
        return Deliver(r.u64(), r.header())
    if msg_type == MsgType.FETCH_REQUEST:
        return FetchRequest(r.locator(), r.opt_u64())
    if msg_type == MsgType.FETCH_RESPONSE:
        status = r.u8()
        if status > 3:
            raise DecodeError(f'unknown fetch status {status}')
        return FetchResponse(status, r.blob())
    if msg_type == MsgType.ACK:
        return Ack(r.u64())
    if msg_type == MsgType.CREATE_TOPIC:
        return CreateTopic(r.topic_config())
    if msg_type == MsgType.GAP:
        return Gap(r.string(), r.u64(), r.u64())
    if msg_type == MsgType.ERROR:
        return Error(r.string(), r.string())
    raise UnknownMessageType(f'msg_type {msg_type}')


def encode(message, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
    w = _Writer(max_payload)
    _encode_body(message, w)
    body = bytes(w.buf)
    return LENGTH.pack(len(body) + PREAMBLE.size) + PREAMBLE.pack(VERSION, int(message.msg_type)) + body


def decode(data):
    """Decode exactly one complete frame."""
    if len(data) < LENGTH.size:
        raise TruncatedFrame(f'{len(data)} bytes cannot hold a length field')
    (length,) = LENGTH.unpack_from(data)
    available = len(data) - LENGTH.size
    if available < length:
        raise TruncatedFrame(f'frame claims {length} bytes, {available} present')
    if available > length:
        raise TrailingBytes(f'{available - length} bytes after the frame')
    if length < PREAMBLE.size:
        raise TruncatedFrame(f'frame length {length} is shorter than version + msg_type')
    version, msg_type = PREAMBLE.unpack_from(data, LENGTH.size)
    if version != VERSION:
        raise UnsupportedVersion(f'version {version}')
    reader = _Reader(bytes(data[LENGTH.size + PREAMBLE.size:]))
    try:
        message = _decode_body(msg_type, reader)
    except (ConfigError, ContractViolation) as exc:
        raise DecodeError(f'invalid {MsgType(msg_type).name.lower()} body: {exc}') from exc
    if reader.pos != len(reader.data):
        raise TrailingBytes(f'{len(reader.data) - reader.pos} unread body bytes')
    return message


def frame_size(message):
    return len(encode(message))
