"""Frame transport over asyncio byte streams (live mode)."""
import asyncio

from core.exceptions import TruncatedFrame
from core.types import DEFAULT_MAX_PAYLOAD_BYTES

from .codec import LENGTH, decode, encode

# Largest frame a peer may announce: one maximal payload plus header slack.
FRAME_SLACK = 64 * 1024


async def read_frame(reader, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
    """Return one raw frame, or None on a clean end of stream."""
    try:
        prefix = await reader.readexactly(LENGTH.size)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise TruncatedFrame('stream ended inside a length field') from exc
    (length,) = LENGTH.unpack(prefix)
    if length > max_payload + FRAME_SLACK:
        raise TruncatedFrame(f'peer announced an oversized frame of {length} bytes')
    try:
        body = await reader.readexactly(length)
    except asyncio.IncompleteReadError as exc:
        raise TruncatedFrame(f'stream ended after {len(exc.partial)} of {length} bytes') from exc
    return prefix + body


async def read_message(reader, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
    frame = await read_frame(reader, max_payload)
    return None if frame is None else decode(frame)


async def write_message(writer, message, max_payload=DEFAULT_MAX_PAYLOAD_BYTES):
    writer.write(encode(message, max_payload))
    await writer.drain()

