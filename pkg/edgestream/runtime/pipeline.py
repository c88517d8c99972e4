"""
Topic pipeline: receive, filter, fetch, apply, publish.

``Pipeline`` is the transport-neutral state machine shared by the
simulator and the live ``ModelProcess``. Drivers feed it deliveries and
clock ticks, take one unit of work at a time, fetch the payloads it lists,
and report back; every step is written to the node's metric log.

    deliver/tick -> take -> fetch_* -> assemble -> run_model -> finish
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from core.exceptions import ConfigError, ModelError
from core.timing import is_fresh
from core.types import Header, JoinMode, Slot
from join.joiners import expired_slots, make_joiner, skew_filter
from metrics.events import EventKind, SkipReason

from .failsoft import FailSoft, FailSoftPolicy
from .operators import Prediction

logger = logging.getLogger(__name__)


class Sampler:
    """Deterministic data skipping: drops arrival k iff floor((k+1)f) - floor(kf) == 1."""

    def __init__(self, fraction=0):
        self.fraction = Fraction(str(fraction))
        if not 0 <= self.fraction < 1:
            raise ConfigError(f'skip fraction must be in [0, 1), got {fraction}')
        self.count = 0

    def skip(self):
        k = self.count
        self.count += 1
        return (k + 1) * self.fraction // 1 - k * self.fraction // 1 == 1


@dataclass
class Work:
    seq: int
    joined: object
    failed: dict = field(default_factory=dict)
    acks: list = field(default_factory=list)
    payloads: dict = field(default_factory=dict)
    value: object = None

    def fetches(self):
        """Slots whose payload still has to come from a peer."""
        return [
            (index, slot.header) for index, slot in enumerate(self.joined.slots)
            if slot.header.is_lazy and index not in self.failed and index not in self.payloads
        ]


class Pipeline:
    def __init__(self, config, model, log, policy=FailSoftPolicy.DROP_TUPLE, skip_fraction=0, shared=False):
        if model.consumes != config.topic:
            raise ConfigError(f'model {model.id!r} consumes {model.consumes!r}, not {config.topic!r}')
        self.config = config
        self.model = model
        self.log = log
        self.shared = shared
        self.joiner = make_joiner(config)
        self.fail_soft = FailSoft(policy)
        self.sampler = Sampler(skip_fraction)
        self.latest_only = config.effective_mode() == JoinMode.HYBRID
        self.pending = deque()
        self.in_flight: Optional[Work] = None
        self.acks = []
        self.next_seq = 0
        self.predictions = 0

    @property
    def topic(self):
        return self.config.topic

    @property
    def idle(self):
        return self.in_flight is None and not self.pending

    def start(self, now=None):
        self.log.emit(
            EventKind.TOPIC_CONFIG, self.topic, at=now, config=self.config.to_dict(), model=self.model.id,
            policy=self.fail_soft.policy.value, skip_fraction=str(self.sampler.fraction), shared=self.shared,
        )
        logger.info('Pipeline %s started on %s for %s', self.model.id, self.log.node, self.topic)

    def take_acks(self):
        acks, self.acks = self.acks, []
        return acks

    # -- intake --

    def deliver(self, delivery, now):
        header = delivery.header
        self.log.item(
            EventKind.BROKER_DELIVER, header, seq=delivery.sequence, at=now, publish_ts=header.publish_ts,
            frame_bytes=delivery.frame_bytes, payload_bytes=0 if header.is_lazy else len(header.inline),
        )
        self.tick(now)
        if self.sampler.skip():
            self.log.skip(header, SkipReason.SAMPLED_OUT, seq=delivery.sequence, at=now)
            self.acks.append(delivery.sequence)
            return
        joined = self.joiner.on_arrival(header, now)
        self._log_joiner_skips(now)
        if joined is None:
            self.acks.append(delivery.sequence)
        else:
            self._admit(joined, now, [delivery.sequence])

    def tick(self, now):
        for joined in self.joiner.advance_to(now):
            self._admit(joined, now, [])
        self._log_joiner_skips(now)

    def _log_joiner_skips(self, now):
        for header, reason in self.joiner.take_skips():
            self.log.skip(header, reason, at=now)

    def _admit(self, joined, now, acks):
        seq = self.next_seq
        self.next_seq += 1
        trigger = joined.trigger_header
        self.log.emit(
            EventKind.JOIN_EMIT, self.topic, trigger.stream, trigger.event_ts, seq, at=now,
            slots=[[s.header.stream, s.header.event_ts] for s in joined.slots], new=joined.new_information,
        )
        work = Work(seq, joined, acks=acks)
        verdict = skew_filter(joined, self.config.max_skew, self.config.time_basis)
        if not verdict.accepted:
            if self.fail_soft.policy == FailSoftPolicy.DROP_TUPLE:
                self._drop(work, SkipReason.SKEW, now, skew=verdict.skew)
                return
            for index in expired_slots(joined, self.config.max_skew, self.config.time_basis):
                work.failed[index] = SkipReason.SKEW
        if any(not is_fresh(slot.header, now, self.config.freshness_threshold) for slot in joined.slots):
            self._drop(work, SkipReason.STALE, now)
            return
        if self.latest_only and self.pending:
            self._drop(self.pending.pop(), SkipReason.SUPERSEDED_BY_HYBRID, now)
        self.pending.append(work)

    def _drop(self, work, reason, now, **extra):
        for slot in work.joined.slots:
            self.log.skip(slot.header, reason, seq=work.seq, at=now, **extra)
        self.acks.extend(work.acks)
        if work is self.in_flight:
            self.in_flight = None

    # -- processing --

    def take(self):
        """Next unit of work, or None while a model invocation is in flight."""
        if self.in_flight is not None or not self.pending:
            return None
        self.in_flight = self.pending.popleft()
        return self.in_flight

    def fetch_started(self, work, index, now):
        header = work.joined.slots[index].header
        self.log.item(EventKind.FETCH_BEGIN, header, seq=work.seq, at=now, node=header.locator.node)

    def fetch_finished(self, work, index, now, payload=None, error=None, cached=False):
        header = work.joined.slots[index].header
        if error is None:
            work.payloads[index] = payload
            self.log.item(EventKind.FETCH_END, header, seq=work.seq, at=now, bytes=0 if cached else len(payload),
                          cached=cached, status='ok')
            return
        reason = SkipReason.STALE if getattr(error, 'code', '') == 'stale_rejected' else SkipReason.FAILED_FETCH
        work.failed[index] = reason
        self.log.item(EventKind.FETCH_END, header, seq=work.seq, at=now, bytes=0, cached=False,
                      status=getattr(error, 'code', 'error'))
        self.log.skip(header, reason, seq=work.seq, at=now)

    def assemble(self, work, now):
        """Fill the tuple with payloads and apply the fail-soft policy; None means dropped."""
        joined = work.joined
        for index, slot in enumerate(joined.slots):
            if index not in work.failed and not is_fresh(slot.header, now, self.config.freshness_threshold):
                self._drop(work, SkipReason.STALE, now)
                return None
        for index, slot in enumerate(joined.slots):
            if index in work.failed:
                continue
            payload = slot.header.inline if not slot.header.is_lazy else work.payloads[index]
            joined = joined.with_slot(index, Slot(slot.header, payload))
        repaired = self.fail_soft.impute(joined, set(work.failed))
        if repaired is None:
            reason = next(iter(work.failed.values()))
            self._drop(work, reason, now)
            return None
        for index, slot in enumerate(joined.slots):
            if index not in work.failed:
                self.fail_soft.record_good(slot.header.stream, slot.payload)
        work.joined = repaired
        return repaired

    def run_model(self, work, now):
        trigger = work.joined.trigger_header
        excluded = [[work.joined.slots[i].header.stream, work.joined.slots[i].header.event_ts] for i in sorted(work.failed)]
        self.log.emit(EventKind.MODEL_BEGIN, self.topic, trigger.stream, trigger.event_ts, work.seq, at=now,
                      model=self.model.id, excluded=excluded)
        try:
            work.value = self.model.invoke(work.joined)
        except ModelError as exc:
            logger.warning('Model %s failed on tuple %d: %s', self.model.id, work.seq, exc)
            self._drop(work, SkipReason.MODEL_ERROR, now)
            return False
        return True

    def finish(self, work, now):
        trigger = work.joined.trigger_header
        self.log.emit(EventKind.MODEL_END, self.topic, trigger.stream, trigger.event_ts, work.seq, at=now,
                      model=self.model.id)
        self.acks.extend(work.acks)
        self.in_flight = None
        self.predictions += 1
        return Prediction(work.value, self.model.id, trigger.event_ts, max(now, trigger.event_ts))

    def output_header(self, prediction, locator=None, inline=None):
        return Header(
            self.model.output_topic, self.model.produces, prediction.input_trigger_ts, prediction.emit_ts,
            locator=locator, inline=inline,
        )

    def published(self, work, header, prediction, now):
        trigger = work.joined.trigger_header
        origin = [trigger.topic, trigger.stream, trigger.event_ts]
        self.log.item(
            EventKind.PREDICT_PUBLISH, header, at=now, model=self.model.id, origin=origin, tuple=work.seq,
            value=prediction.value if isinstance(prediction.value, int) else None,
            size=header.payload_length,
        )

    def stop(self, now, rebalanced=False):
        """Account for everything still held when the pipeline shuts down."""
        reason = SkipReason.SHARED_REBALANCE if rebalanced else SkipReason.UNPROCESSED
        held = list(self.pending)
        if self.in_flight is not None:
            held.insert(0, self.in_flight)
        for work in held:
            self._drop(work, reason, now)
        self.pending.clear()
        self.in_flight = None
        for header in self.joiner.pending_items():
            self.log.skip(header, SkipReason.UNPROCESSED, at=now)
        logger.info('Pipeline %s stopped after %d predictions', self.model.id, self.predictions)
