"""
Re-run join decisions from a metric log.

For one (node, topic) the log holds the topic configuration, every header
the node received (``broker_deliver``, in receipt order) and every tuple its
joiner emitted (``join_emit``). Replaying feeds the same arrivals through a
fresh joiner and compares the emitted signatures one by one.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

from core.exceptions import IncompleteLog
from core.types import Header, TopicConfig
from metrics.events import EventKind, SkipReason

from .joiners import make_joiner

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Divergence:
    index: int
    sequence: Optional[int]
    expected: Optional[tuple]
    actual: Optional[tuple]

    def describe(self):
        return (f'tuple #{self.index} (join seq {self.sequence}): '
                f'logged {self.expected}, replayed {self.actual}')


@dataclass
class ReplayResult:
    node: str
    topic: str
    logged: int = 0
    replayed: int = 0
    divergence: Optional[Divergence] = None
    signatures: list = field(default_factory=list, repr=False)

    @property
    def ok(self):
        return self.divergence is None


def logged_signature(event):
    slots = tuple((stream, ts) for stream, ts in event.extra['slots'])
    return (event.stream, slots)


def replay_pipeline(events, node, topic):
    """Replay the joiner of ``node`` on ``topic``; ``events`` is that node's log in order."""
    mine = [e for e in events if e.node == node and e.topic == topic]
    configs = [e for e in mine if e.kind == EventKind.TOPIC_CONFIG]
    if not configs:
        raise IncompleteLog(f'no topic_config for {topic!r} on {node!r}')
    start = configs[0]
    config = TopicConfig.from_dict(start.extra['config'])
    joiner = make_joiner(config)
    sampled_out = {
        (e.stream, e.event_ts, e.seq) for e in mine
        if e.kind == EventKind.SKIP and e.reason == SkipReason.SAMPLED_OUT.value
    }
    result = ReplayResult(node, topic)
    expected = []
    replayed = []
    for event in mine:
        if event.kind == EventKind.BROKER_DELIVER:
            replayed.extend(joiner.advance_to(event.at))
            if (event.stream, event.event_ts, event.seq) in sampled_out:
                continue
            header = Header(
                topic, event.stream, event.event_ts, event.extra.get('publish_ts', event.event_ts), inline=b'',
            )
            joined = joiner.on_arrival(header, event.at)
            if joined is not None:
                replayed.append(joined)
        elif event.kind == EventKind.JOIN_EMIT:
            replayed.extend(joiner.advance_to(event.at))
            expected.append((event.seq, logged_signature(event)))
        elif event.kind == EventKind.SHUTDOWN:
            break

    result.logged = len(expected)
    result.replayed = len(replayed)
    result.signatures = [t.signature() for t in replayed]
    for index in range(max(len(expected), len(replayed))):
        sequence, want = expected[index] if index < len(expected) else (None, None)
        got = result.signatures[index] if index < len(replayed) else None
        if want != got:
            result.divergence = Divergence(index, sequence, want, got)
            logger.warning('Replay of %s on %s diverged: %s', topic, node, result.divergence.describe())
            break
    return result


def replay_log(events):
    """Replay every pipeline found in a merged log, in (node, topic) order."""
    pipelines = sorted({(e.node, e.topic) for e in events if e.kind == EventKind.TOPIC_CONFIG})
    results = []
    for node, topic in pipelines:
        node_events = [e for e in events if e.node == node]
        results.append(replay_pipeline(node_events, node, topic))
    return results
