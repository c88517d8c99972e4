"""
Skew and freshness arithmetic, and the clocks that feed it.

The simulator owns a ``ManualClock`` advanced by its event loop; live
processes use ``WallClock`` and assume the hosts are externally synchronized.
"""
import time
from typing import Protocol

from .exceptions import ContractViolation


def compute_skew(timestamps):
    """Time skew of a tuple: newest minus oldest timestamp."""
    timestamps = list(timestamps)
    if not timestamps:
        raise ContractViolation('compute_skew needs at least one timestamp')
    return max(timestamps) - min(timestamps)


def age(event_ts, now):
    # Data stamped ahead of the receiver's clock is treated as brand new.
    return max(0, now - event_ts)


def is_fresh(header, now, threshold):
    if threshold is None:
        return True
    return age(header.event_ts, now) <= threshold


class Clock(Protocol):
    def now(self) -> int: ...


class WallClock:
    def now(self):
        return time.time_ns() // 1_000


class ManualClock:
    def __init__(self, start=0):
        self._now = start

    def now(self):
        return self._now

    def set(self, value):
        if value < self._now:
            raise ContractViolation(f'clock cannot move backwards ({value} < {self._now})')
        self._now = value

    def advance(self, delta):
        self.set(self._now + delta)
