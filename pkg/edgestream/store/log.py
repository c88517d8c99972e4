"""
Time-indexed payload logs kept on the node that produced the data.

A record is laid out as ``u64 event_ts | u32 length | payload``. Locators
point at the record start and carry the payload length. Segments are
numbered per node so that a locator (host, port, segment, offset) names
exactly one record. With a ``directory`` the segments are also written as
``seg-<start_ts>.log`` files next to a sparse ``.idx`` sidecar holding one
``u64 event_ts | u64 offset`` entry every ``INDEX_INTERVAL`` records.
"""
import bisect
import logging
import os
import struct
from collections import deque

from core.exceptions import ContractViolation, Evicted, NotFound, StaleRejected, StorageFull
from core.timing import age
from core.types import PayloadLocator
from wire.messages import FetchResponse, FetchStatus

logger = logging.getLogger(__name__)

RECORD_HEADER = struct.Struct('<QI')
INDEX_ENTRY = struct.Struct('<QQ')
INDEX_INTERVAL = 64


class Segment:
    def __init__(self, number, start_ts, path=None):
        self.number = number
        self.start_ts = start_ts
        self.size = 0
        self.records = {}
        self.order = deque()
        self.index = []
        self.count = 0
        self.evicted_upto = 0
        self.path = path
        self._file = open(path, 'ab') if path else None

    @property
    def index_path(self):
        return self.path[:-len('.log')] + '.idx' if self.path else None

    def append(self, event_ts, payload):
        offset = self.size
        if self._file is not None:
            self._file.write(RECORD_HEADER.pack(event_ts, len(payload)))
            self._file.write(payload)
            self._file.flush()
            stored = None
        else:
            stored = bytes(payload)
        self.records[offset] = (event_ts, len(payload), stored)
        self.order.append(offset)
        if self.count % INDEX_INTERVAL == 0:
            self.index.append((event_ts, offset))
            if self._file is not None:
                with open(self.index_path, 'ab') as idx:
                    idx.write(INDEX_ENTRY.pack(event_ts, offset))
        self.count += 1
        self.size += RECORD_HEADER.size + len(payload)
        return offset

    def payload(self, offset):
        event_ts, length, stored = self.records[offset]
        if stored is not None:
            return stored
        with open(self.path, 'rb') as fh:
            fh.seek(offset + RECORD_HEADER.size)
            return fh.read(length)

    def evict_oldest(self):
        offset = self.order.popleft()
        _, length, _ = self.records.pop(offset)
        self.evicted_upto = offset + RECORD_HEADER.size + length
        return length

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None

    def remove_files(self):
        self.close()
        for path in (self.path, self.index_path):
            if path and os.path.exists(path):
                os.remove(path)


class PayloadLog:
    """Per-stream ring of segments with oldest-first eviction."""

    def __init__(self, store, stream, retention_bytes, segment_bytes, segment_span):
        self.store = store
        self.stream = stream
        self.retention_bytes = retention_bytes
        self.segment_bytes = segment_bytes
        self.segment_span = segment_span
        self.segments = deque()
        self.live_bytes = 0

    @property
    def active(self):
        return self.segments[-1] if self.segments else None

    def _needs_roll(self, event_ts, size):
        segment = self.active
        if segment is None:
            return True
        if segment.count and segment.size + RECORD_HEADER.size + size > self.segment_bytes:
            return True
        return event_ts - segment.start_ts >= self.segment_span

    def append(self, event_ts, payload):
        size = len(payload)
        if size > self.retention_bytes:
            raise StorageFull(f'payload of {size} bytes exceeds the {self.retention_bytes}-byte retention of {self.stream}')
        if size > 0xFFFF_FFFF:
            raise ContractViolation('payload length must fit in 32 bits')
        if self._needs_roll(event_ts, size):
            self.segments.append(self.store.new_segment(self, event_ts))
        segment = self.active
        offset = segment.append(event_ts, payload)
        self.live_bytes += size
        self._enforce_retention()
        return PayloadLocator(self.store.host, self.store.port, segment.number, offset, size)

    def _enforce_retention(self):
        while self.live_bytes > self.retention_bytes:
            oldest = self.segments[0]
            self.live_bytes -= oldest.evict_oldest()
            if not oldest.order:
                self.segments.popleft()
                self.store.retire_segment(oldest)
            logger.debug('Evicted oldest record of %s, %d bytes live', self.stream, self.live_bytes)

    def seek(self, event_ts):
        """Locator of the first live record at or after ``event_ts``, or None."""
        for segment in self.segments:
            if segment.order and segment.records[segment.order[-1]][0] < event_ts:
                continue
            keys = [ts for ts, _ in segment.index]
            position = max(bisect.bisect_left(keys, event_ts) - 1, 0)
            start = segment.index[position][1] if segment.index else 0
            for offset in segment.order:
                if offset < start:
                    continue
                ts, length, _ = segment.records[offset]
                if ts >= event_ts:
                    return PayloadLocator(self.store.host, self.store.port, segment.number, offset, length)
        return None


class NodeStore:
    """All payload logs of one node and the server side of peer fetches."""

    def __init__(self, host, port=0, retention_bytes=1024 ** 3, segment_bytes=64 * 1024 ** 2,
                 segment_span=600_000_000, directory=None):
        self.host = host
        self.port = port
        self.retention_bytes = retention_bytes
        self.segment_bytes = segment_bytes
        self.segment_span = segment_span
        self.directory = directory
        self.logs = {}
        self.segments = {}
        self.next_segment = 0
        self.bytes_served = 0
        if directory:
            os.makedirs(directory, exist_ok=True)

    @property
    def node(self):
        return f'{self.host}:{self.port}'

    def log(self, stream):
        if stream not in self.logs:
            self.logs[stream] = PayloadLog(self, stream, self.retention_bytes, self.segment_bytes, self.segment_span)
        return self.logs[stream]

    def append(self, stream, event_ts, payload):
        return self.log(stream).append(event_ts, payload)

    def new_segment(self, log, start_ts):
        number = self.next_segment
        self.next_segment += 1
        path = None
        if self.directory:
            stream_dir = os.path.join(self.directory, log.stream)
            os.makedirs(stream_dir, exist_ok=True)
            path = os.path.join(stream_dir, f'seg-{start_ts}.log')
            if os.path.exists(path):
                path = os.path.join(stream_dir, f'seg-{start_ts}-{number}.log')
        segment = Segment(number, start_ts, path)
        self.segments[number] = segment
        logger.debug('Opened segment %d for %s at %d', number, log.stream, start_ts)
        return segment

    def retire_segment(self, segment):
        self.segments.pop(segment.number, None)
        segment.remove_files()

    def _locate(self, locator):
        if locator.host != self.host or locator.port != self.port:
            raise NotFound(f'locator names {locator.node}, this store is {self.node}')
        segment = self.segments.get(locator.segment)
        if segment is None:
            if locator.segment < self.next_segment:
                raise Evicted(f'segment {locator.segment} was retired')
            raise NotFound(f'segment {locator.segment} does not exist')
        if locator.offset in segment.records:
            event_ts, length, _ = segment.records[locator.offset]
            if length != locator.length:
                raise NotFound(f'record at {locator.offset} has {length} bytes, locator says {locator.length}')
            return segment, event_ts
        if locator.offset < segment.evicted_upto:
            raise Evicted(f'record {locator.segment}/{locator.offset} was evicted')
        raise NotFound(f'no record at {locator.segment}/{locator.offset}')

    def record_ts(self, locator):
        return self._locate(locator)[1]

    def read(self, locator, now=None, max_age=None):
        segment, event_ts = self._locate(locator)
        if max_age is not None and now is not None and age(event_ts, now) > max_age:
            raise StaleRejected(f'record {locator.segment}/{locator.offset} is {age(event_ts, now)}us old')
        return segment.payload(locator.offset)

    def serve(self, request, now):
        """Answer a FetchRequest; the freshness check here is the authoritative one."""
        try:
            payload = self.read(request.locator, now, request.max_age)
        except StaleRejected:
            return FetchResponse(FetchStatus.STALE_REJECTED)
        except Evicted:
            return FetchResponse(FetchStatus.EVICTED)
        except NotFound:
            return FetchResponse(FetchStatus.NOT_FOUND)
        self.bytes_served += len(payload)
        return FetchResponse(FetchStatus.OK, payload)

    def close(self):
        for segment in self.segments.values():
            segment.close()
