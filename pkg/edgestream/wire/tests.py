import asyncio
import random

from django.test import SimpleTestCase

from core.exceptions import (
    DecodeError, EncodingError, MalformedString, TrailingBytes, TruncatedFrame, UnknownMessageType,
    UnsupportedVersion,
)
from core.types import Header, JoinMode, PayloadLocator, TimeBasis, TopicConfig

from .codec import decode, encode, frame_size
from .messages import (
    Ack, CreateTopic, Deliver, Error, FetchRequest, FetchResponse, FetchStatus, Gap, PublishHeader, Subscribe,
)
from .stream import read_frame, read_message, write_message


def random_name(rng):
    alphabet = 'abcdefghijklmnopqrstuvwxyz0123456789_-é猫'
    return ''.join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))


def random_locator(rng):
    return PayloadLocator(
        host=random_name(rng), port=rng.randint(0, 0xFFFF), segment=rng.randint(0, 2**64 - 1),
        offset=rng.randint(0, 2**64 - 1), length=rng.randint(0, 2**32 - 1),
    )


def random_header(rng):
    event_ts = rng.randint(0, 2**62)
    publish_ts = event_ts + rng.randint(0, 10**9)
    if rng.random() < 0.5:
        return Header(random_name(rng), random_name(rng), event_ts, publish_ts, locator=random_locator(rng))
    payload = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 64)))
    return Header(random_name(rng), random_name(rng), event_ts, publish_ts, inline=payload)


def random_duration(rng):
    return None if rng.random() < 0.3 else rng.randint(0, 10**12)


def random_config(rng):
    mode = rng.choice(list(JoinMode))
    wanted = rng.randint(1, 6)
    streams = []
    while len(streams) < wanted:
        name = random_name(rng)
        if name not in streams:
            streams.append(name)
    return TopicConfig(
        topic=random_name(rng),
        streams=tuple(streams),
        join_mode=mode,
        window=rng.randint(1, 10**9) if mode == JoinMode.TIME_TRIGGERED else None,
        min_interval=rng.randint(0, 10**9) if mode == JoinMode.HYBRID else None,
        max_skew=random_duration(rng),
        freshness_threshold=random_duration(rng),
        target_prediction_frequency=random_duration(rng),
        time_basis=rng.choice(list(TimeBasis)),
    )


def random_message(rng):
    kind = rng.randrange(9)
    if kind == 0:
        return PublishHeader(random_header(rng))
    if kind == 1:
        return Subscribe(random_name(rng), random_name(rng), rng.random() < 0.5)
    if kind == 2:
        return Deliver(rng.randint(0, 2**64 - 1), random_header(rng))
    if kind == 3:
        return FetchRequest(random_locator(rng), random_duration(rng))
    if kind == 4:
        return FetchResponse(rng.choice(list(FetchStatus)), bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 32))))
    if kind == 5:
        return Ack(rng.randint(0, 2**64 - 1))
    if kind == 6:
        return CreateTopic(random_config(rng))
    if kind == 7:
        start = rng.randint(0, 2**32)
        return Gap(random_name(rng), start, start + rng.randint(0, 1000))
    return Error(random_name(rng), random_name(rng))


class EncodeLayoutTests(SimpleTestCase):
    def test_ack_zero_layout(self):
        frame = encode(Ack(0))
        self.assertEqual(frame, bytes.fromhex('0a000000' '01' '05' '0000000000000000'))
        self.assertEqual(len(frame), 14)

    def test_subscribe_layout(self):
        frame = encode(Subscribe(topic='a', consumer_id='c', shared=False))
        self.assertEqual(frame, bytes.fromhex('09000000' '01' '01' '0100' '61' '0100' '63' '00'))

    def test_length_counts_version_and_type(self):
        frame = encode(Gap('t', 1, 2))
        self.assertEqual(int.from_bytes(frame[:4], 'little'), len(frame) - 4)

    def test_lazy_header_layout(self):
        header = Header('t', 's', 1, 2, locator=PayloadLocator('h', 80, 3, 4, 5))
        body = encode(PublishHeader(header))[6:]
        expected = (
            bytes.fromhex('0100') + b't' + bytes.fromhex('0100') + b's'
            + (1).to_bytes(8, 'little') + (2).to_bytes(8, 'little') + b'\x00'
            + bytes.fromhex('0100') + b'h' + (80).to_bytes(2, 'little')
            + (3).to_bytes(8, 'little') + (4).to_bytes(8, 'little') + (5).to_bytes(4, 'little')
        )
        self.assertEqual(body, expected)

    def test_unlimited_duration_marker(self):
        frame = encode(FetchRequest(PayloadLocator('h', 1, 0, 0, 0), None))
        self.assertEqual(frame[-8:], b'\xff' * 8)

    def test_deliver_is_publish_plus_sequence(self):
        header = Header('t', 's', 5, 6, inline=b'xyz')
        self.assertEqual(frame_size(Deliver(9, header)), frame_size(PublishHeader(header)) + 8)

    def test_equal_messages_encode_identically(self):
        rng = random.Random(11)
        for _ in range(200):
            state = rng.getstate()
            first = random_message(rng)
            rng.setstate(state)
            second = random_message(rng)
            self.assertEqual(first, second)
            self.assertEqual(encode(first), encode(second))


class EncodeErrorTests(SimpleTestCase):
    def test_string_too_long(self):
        with self.assertRaises(EncodingError):
            encode(Error('x' * 70_000, 'm'))

    def test_payload_over_max(self):
        header = Header('t', 's', 0, 0, inline=b'x' * 101)
        with self.assertRaises(EncodingError):
            encode(PublishHeader(header), max_payload=100)

    def test_integer_overflow(self):
        with self.assertRaises(EncodingError):
            encode(Ack(2**64))

    def test_not_a_message(self):
        with self.assertRaises(EncodingError):
            encode(object())


class DecodeTests(SimpleTestCase):
    def test_round_trip_publish_header(self):
        header = Header('topic', 'cam', 100, 150, locator=PayloadLocator('10.0.0.2', 7000, 1, 64, 512))
        self.assertEqual(decode(encode(PublishHeader(header))), PublishHeader(header))

    def test_randomized_round_trip(self):
        rng = random.Random(2024)
        for _ in range(2_000):
            message = random_message(rng)
            self.assertEqual(decode(encode(message)), message)

    def test_truncated_frame(self):
        frame = encode(Ack(7))
        with self.assertRaises(TruncatedFrame):
            decode(frame[:-1])
        with self.assertRaises(TruncatedFrame):
            decode(frame[:3])

    def test_body_shorter_than_declared_fields(self):
        # Declared length matches, but the body cannot hold a u64.
        with self.assertRaises(TruncatedFrame):
            decode(bytes.fromhex('06000000' '01' '05' '00000000'))

    def test_unsupported_version(self):
        frame = bytearray(encode(Ack(0)))
        frame[4] = 2
        with self.assertRaises(UnsupportedVersion):
            decode(bytes(frame))

    def test_unknown_message_type(self):
        frame = bytearray(encode(Ack(0)))
        frame[5] = 42
        with self.assertRaises(UnknownMessageType):
            decode(bytes(frame))

    def test_malformed_utf8(self):
        frame = bytearray(encode(Subscribe('a', 'c')))
        frame[8] = 0xFF
        with self.assertRaises(MalformedString):
            decode(bytes(frame))

    def test_trailing_bytes_after_frame(self):
        with self.assertRaises(TrailingBytes):
            decode(encode(Ack(0)) + b'\x00')

    def test_trailing_bytes_inside_body(self):
        frame = encode(Ack(0))
        padded = (len(frame) - 4 + 1).to_bytes(4, 'little') + frame[4:] + b'\x00'
        with self.assertRaises(TrailingBytes):
            decode(padded)

    def test_invalid_header_body_is_a_decode_error(self):
        header = Header('t', 's', 10, 10, inline=b'')
        frame = bytearray(encode(PublishHeader(header)))
        # publish_ts sits right after event_ts; make it precede event_ts.
        offset = 6 + 3 + 3 + 8
        frame[offset:offset + 8] = (5).to_bytes(8, 'little')
        with self.assertRaises(DecodeError):
            decode(bytes(frame))

    def test_oversized_names_are_decode_errors(self):
        def string(raw):
            return len(raw).to_bytes(2, 'little') + raw

        def frame(msg_type, body):
            return (len(body) + 2).to_bytes(4, 'little') + bytes([1, msg_type]) + body

        long_name = string(b'n' * 256)
        header_body = long_name + string(b's') + bytes(16) + bytes([1]) + bytes(4)
        subscribe_body = long_name + string(b'c') + bytes([0])
        gap_body = long_name + bytes(16)
        for msg_type, body in ((0, header_body), (1, subscribe_body), (7, gap_body)):
            with self.subTest(msg_type=msg_type), self.assertRaises(DecodeError):
                decode(frame(msg_type, body))
        with self.assertRaises(DecodeError):
            decode(frame(0, string(b't') + string(b'') + bytes(16) + bytes([1]) + bytes(4)))

    def test_bad_boolean(self):
        frame = bytearray(encode(Subscribe('a', 'c')))
        frame[-1] = 3
        with self.assertRaises(DecodeError):
            decode(bytes(frame))


class StreamTransportTests(SimpleTestCase):
    def feed(self, data, eof=True):
        reader = asyncio.StreamReader()
        reader.feed_data(data)
        if eof:
            reader.feed_eof()
        return reader

    def test_reads_consecutive_frames(self):
        async def scenario():
            reader = self.feed(encode(Ack(1)) + encode(Ack(2)))
            return [await read_message(reader), await read_message(reader), await read_message(reader)]

        self.assertEqual(asyncio.run(scenario()), [Ack(1), Ack(2), None])

    def test_partial_frame_is_truncated(self):
        async def scenario():
            await read_frame(self.feed(encode(Ack(1))[:-2]))

        with self.assertRaises(TruncatedFrame):
            asyncio.run(scenario())

    def test_oversized_length_rejected(self):
        async def scenario():
            await read_frame(self.feed((2**31).to_bytes(4, 'little')), max_payload=1024)

        with self.assertRaises(TruncatedFrame):
            asyncio.run(scenario())

    def test_write_message(self):
        class Writer:
            def __init__(self):
                self.data = bytearray()

            def write(self, chunk):
                self.data += chunk

            async def drain(self):
                pass

        writer = Writer()
        asyncio.run(write_message(writer, Gap('t', 3, 4)))
        self.assertEqual(bytes(writer.data), encode(Gap('t', 3, 4)))
