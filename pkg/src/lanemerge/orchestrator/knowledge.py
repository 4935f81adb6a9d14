"""Freshest-state store and recommendation bookkeeping."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum

from ..dqn.recommend import Recommendation
from ..geometry import VehicleState

DEFAULT_STALENESS_MS = 1000


class KnowledgeBase:
    """Latest state per vehicle.

    Writers are serialised by a lock; :meth:`snapshot` copies under the same
    lock, so readers never observe a half-applied upsert or sweep.
    """

    def __init__(self, staleness_ms: float = DEFAULT_STALENESS_MS):
        if staleness_ms <= 0:
            raise ValueError("staleness horizon must be positive")
        self.staleness_ms = staleness_ms
        self._states: dict[str, VehicleState] = {}
        self._lock = threading.Lock()

    def upsert(self, state: VehicleState) -> bool:
        """Store ``state`` unless an equally fresh or fresher one is known; returns whether it was stored."""
        with self._lock:
            old = self._states.get(state.vehicle_id)
            if old is not None and old.timestamp >= state.timestamp:
                return False
            self._states[state.vehicle_id] = state
            return True

    def sweep(self, now_ms: float) -> int:
        with self._lock:
            stale = [k for k, s in self._states.items() if now_ms - s.timestamp > self.staleness_ms]
            for k in stale:
                del self._states[k]
            return len(stale)

    def snapshot(self, boundary=None) -> dict[str, VehicleState]:
        """Consistent copy, optionally limited to states whose lat/lon lie inside ``boundary``."""
        with self._lock:
            states = dict(self._states)
        if boundary is None:
            return states
        return {k: s for k, s in states.items() if s.lat is None or boundary.contains(s.lat, s.lon)}

    def get(self, vehicle_id: str) -> VehicleState | None:
        with self._lock:
            return self._states.get(vehicle_id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._states)


class Status(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    ABORTED = "aborted"
    SUPERSEDED = "superseded"


FEEDBACK_TO_STATUS = {"accept": Status.ACCEPTED, "reject": Status.REJECTED, "abort": Status.ABORTED}


class InvalidTransition(RuntimeError):
    pass


@dataclass
class RecommendationEnvelope:
    recommendation_id: str
    target: str
    recommendation: Recommendation
    waypoints: tuple
    created_at: float
    scene: tuple[str, str, str]  # merging, preceding, following ids
    status: Status = Status.PENDING
    history: list[tuple[float, Status]] = field(default_factory=list)

    def transition(self, new: Status, at: float) -> None:
        if self.status is not Status.PENDING:
            raise InvalidTransition(f"{self.recommendation_id} is already {self.status.value}")
        if new is Status.PENDING:
            raise InvalidTransition("cannot return to pending")
        self.status = new
        self.history.append((at, new))


class RecommendationStore:
    """Envelopes by id plus the newest envelope per target vehicle."""

    def __init__(self):
        self._by_id: dict[str, RecommendationEnvelope] = {}
        self._active: dict[str, str] = {}
        self._lock = threading.Lock()

    def add(self, env: RecommendationEnvelope) -> RecommendationEnvelope | None:
        """Register ``env``; a pending predecessor for the same target becomes superseded and is returned."""
        with self._lock:
            if env.recommendation_id in self._by_id:
                raise ValueError(f"duplicate recommendation id {env.recommendation_id}")
            self._by_id[env.recommendation_id] = env
            prev_id = self._active.get(env.target)
            self._active[env.target] = env.recommendation_id
            prev = self._by_id.get(prev_id) if prev_id else None
            if prev is not None and prev.status is Status.PENDING:
                prev.transition(Status.SUPERSEDED, env.created_at)
                return prev
            return None

    def get(self, recommendation_id: str) -> RecommendationEnvelope | None:
        with self._lock:
            return self._by_id.get(recommendation_id)

    def transition(self, recommendation_id: str, new: Status, at: float) -> RecommendationEnvelope | None:
        """Apply a status change; None for unknown ids, :class:`InvalidTransition` from terminal states."""
        with self._lock:
            env = self._by_id.get(recommendation_id)
            if env is not None:
                env.transition(new, at)
            return env

    def active(self, target: str) -> RecommendationEnvelope | None:
        with self._lock:
            rid = self._active.get(target)
            return self._by_id.get(rid) if rid else None

    def all(self) -> list[RecommendationEnvelope]:
        with self._lock:
            return list(self._by_id.values())
