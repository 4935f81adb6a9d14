"""Message gateway with boundary-routed pub/sub and an impaired link model."""

from __future__ import annotations

import heapq
import itertools
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..orchestrator.messages import Boundary
from .scenario import ImpairmentSpec


class Impairment:
    """Per-message one-way delay ``latency + U(0, jitter)`` and Bernoulli loss."""

    def __init__(self, spec: ImpairmentSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng

    def sample(self) -> float | None:
        """Delay in ms, or None when the message is lost."""
        spec = self.spec
        # Draw both numbers every time so the stream does not depend on the loss outcome.
        u_loss, u_jit = self.rng.random(2)
        if u_loss < spec.loss:
            return None
        return spec.latency_ms + u_jit * spec.jitter_ms


@dataclass(order=True)
class Delivery:
    time: float
    seq: int
    dest: str = field(compare=False)
    message: dict = field(compare=False)
    source: str = field(compare=False, default="")


class EventQueue:
    """Min-heap of pending deliveries ordered by (time, sequence)."""

    def __init__(self):
        self._heap: list[Delivery] = []

    def push(self, d: Delivery) -> None:
        heapq.heappush(self._heap, d)

    def peek(self) -> Delivery | None:
        return self._heap[0] if self._heap else None

    def pop_before(self, t: float) -> Delivery | None:
        """Earliest delivery strictly before ``t``, if any."""
        if self._heap and self._heap[0].time < t:
            return heapq.heappop(self._heap)
        return None

    def __len__(self) -> int:
        return len(self._heap)


class Gateway:
    """Routes vehicle updates to subscribers by boundary and directed messages by id.

    Every routed copy goes through the impairment model; the counters keep
    ``delivered + dropped == routed`` where ``routed`` counts one per
    (message, matching subscriber) pair.
    """

    def __init__(self, impairment: Impairment, queue: EventQueue, log=None):
        self.impairment = impairment
        self.queue = queue
        self.subscriptions: dict[str, Boundary] = {}
        self.counters: Counter = Counter()
        self._seq = itertools.count()
        self._log = log or (lambda rec: None)

    def subscribe(self, subscriber: str, boundary: Boundary) -> None:
        self.subscriptions[subscriber] = boundary

    def unsubscribe(self, subscriber: str) -> None:
        self.subscriptions.pop(subscriber, None)

    def publish_update(self, now: float, message: dict) -> int:
        """Fan a vehicle_update out to every subscriber whose boundary holds it."""
        self.counters["published"] += 1
        lat, lon = message["lat"], message["lon"]
        n = 0
        for sub, boundary in sorted(self.subscriptions.items()):
            if boundary.contains(lat, lon):
                self._route(now, sub, message, message.get("uuid", ""))
                n += 1
        if n == 0:
            self.counters["unrouted"] += 1
        return n

    def send(self, now: float, dest: str, message: dict, source: str = "") -> None:
        """Directed message (recommendation to a vehicle, feedback to a subscriber)."""
        self.counters["published"] += 1
        self._route(now, dest, message, source)

    def _route(self, now: float, dest: str, message: dict, source: str) -> None:
        self.counters["routed"] += 1
        seq = next(self._seq)
        delay = self.impairment.sample()
        if delay is None:
            self.counters["dropped"] += 1
            self._log({"t": now, "event": "drop", "seq": seq, "to": dest, "from": source, "type": message.get("type")})
            return
        at = now + delay
        self.queue.push(Delivery(at, seq, dest, message, source))
        self._log({"t": now, "event": "send", "seq": seq, "to": dest, "from": source, "deliver_at": at, "message": message})

    def delivered(self, d: Delivery) -> None:
        self.counters["delivered"] += 1
