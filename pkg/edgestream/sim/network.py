"""
Star LAN model for the simulator.

Every node hangs off one switch through an access link with a latency and
an optional bandwidth cap. A transfer a -> b is serialized on a's uplink and
then on b's downlink; each hop holds its direction for bytes/bandwidth and
then adds the link latency. Directions are FIFO ``simpy.Resource``s, so the
bytes leaving or entering a node never exceed its cap.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import simpy

from core.exceptions import UnreachableNode

logger = logging.getLogger(__name__)

UP = 'up'
DOWN = 'down'


@dataclass(frozen=True)
class LinkSpec:
    latency: int = 0
    bandwidth: Optional[int] = None

    def serialization(self, size):
        if not self.bandwidth:
            return 0
        return math.ceil(size * 1_000_000 / self.bandwidth)


@dataclass(frozen=True)
class Transfer:
    node: str
    direction: str
    start: int
    end: int
    size: int


class StarNetwork:
    def __init__(self, env, links, default_link=None, p2p_setup=0, setup_per_fetch=False):
        self.env = env
        self.links = dict(links)
        self.default_link = default_link
        self.p2p_setup = p2p_setup
        self.setup_per_fetch = setup_per_fetch
        self.connections = set()
        self.ledger = []
        self._directions = {}
        self.bytes_moved = 0

    def link(self, node):
        spec = self.links.get(node, self.default_link)
        if spec is None:
            raise UnreachableNode(f'node {node!r} has no link to the switch')
        return spec

    def check(self, node):
        self.link(node)

    def _direction(self, node, direction):
        key = (node, direction)
        if key not in self._directions:
            self._directions[key] = simpy.Resource(self.env, capacity=1)
        return self._directions[key]

    def _hop(self, node, direction, size):
        spec = self.link(node)
        with self._direction(node, direction).request() as request:
            yield request
            start = self.env.now
            hold = spec.serialization(size)
            if hold:
                yield self.env.timeout(hold)
            self.ledger.append(Transfer(node, direction, start, self.env.now, size))
        if spec.latency:
            yield self.env.timeout(spec.latency)

    def transfer(self, src, dst, size, p2p=False):
        """
        simpy process body moving ``size`` bytes from ``src`` to ``dst``.
        ``p2p`` marks a fetch request, which pays the connection setup when
        the pair has no open connection (or on every fetch when configured).
        """
        if src == dst:
            return
        if p2p and self.p2p_setup:
            pair = frozenset((src, dst))
            if self.setup_per_fetch or pair not in self.connections:
                self.connections.add(pair)
                yield self.env.timeout(self.p2p_setup)
        yield from self._hop(src, UP, size)
        yield from self._hop(dst, DOWN, size)
        self.bytes_moved += size

    def link_bytes(self, node, direction=None):
        return sum(t.size for t in self.ledger if t.node == node and (direction is None or t.direction == direction))
