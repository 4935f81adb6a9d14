"""Traffic orchestrator core: ingest, knowledge base, mediation, checking and emission.

Transport-agnostic. The TCP server in :mod:`.server` and the in-process
simulator endpoint both feed raw lines to :meth:`Orchestrator.handle_line`.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..dqn.network import DuelingNetwork
from ..dqn.recommend import MAX_HORIZON, MergeSnapshot, recommend_trajectory
from ..geometry import SafetyParams, ValidationError
from .checker import check_recommendation, extrapolate
from .knowledge import (
    DEFAULT_STALENESS_MS,
    FEEDBACK_TO_STATUS,
    InvalidTransition,
    KnowledgeBase,
    RecommendationEnvelope,
    RecommendationStore,
    Status,
)
from .messages import (
    Clock,
    ManeuverFeedback,
    Reject,
    SubscriptionAck,
    Sync,
    VehicleUpdate,
    encode,
    parse_line,
    recommendation_message,
)
from .road import RoadConfig, Scene, find_scene, merging_vehicles

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trigger:
    cause: str  # "update" or "recalculation"
    vehicle_id: str


class Mediator:
    """Single-flight computation per target with coalescing of queued triggers.

    In deferred mode nothing runs until :meth:`flush`; otherwise the thread
    that submits a trigger runs it, and keeps draining newer triggers for the
    same target that arrive while it computes.
    """

    def __init__(self, compute: Callable[[str, Trigger], list[dict]], workers: int = 1):
        self.compute = compute
        self.workers = max(1, workers)
        self.deferred = False
        self.pending: dict[str, Trigger] = {}
        self.inflight: set[str] = set()
        self.coalesced = 0
        self._cond = threading.Condition()
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def submit(self, target: str, trigger: Trigger) -> list[dict]:
        with self._cond:
            if target in self.pending:
                self.coalesced += 1
            self.pending[target] = trigger
            if self.deferred:
                return []
        return self._drain(target)

    def _drain(self, target: str) -> list[dict]:
        out: list[dict] = []
        while True:
            with self._cond:
                if target in self.inflight or target not in self.pending:
                    return out
                trigger = self.pending.pop(target)
                self.inflight.add(target)
            try:
                out.extend(self.compute(target, trigger))
            finally:
                with self._cond:
                    self.inflight.discard(target)
                    self._cond.notify_all()

    def flush(self) -> list[dict]:
        """Run every queued target once, in parallel if configured; output ordered by target id."""
        with self._cond:
            while self.inflight:
                self._cond.wait()
            batch = sorted(self.pending.items())
            self.pending.clear()
            self.inflight.update(t for t, _ in batch)
        try:
            if self._pool is not None and len(batch) > 1:
                results = list(self._pool.map(lambda kv: self.compute(*kv), batch))
            else:
                results = [self.compute(t, trig) for t, trig in batch]
        finally:
            with self._cond:
                self.inflight.difference_update(t for t, _ in batch)
                self._cond.notify_all()
        return [doc for docs in results for doc in docs]

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)


class EventLog:
    """Append-only NDJSON log; a no-op when no path is given."""

    def __init__(self, path: str | Path | None):
        self._fh = open(path, "w", encoding="utf-8") if path else None
        self._lock = threading.Lock()
        self.records: list[dict] = []

    def write(self, **record) -> None:
        with self._lock:
            self.records.append(record)
            if self._fh:
                self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")
                self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()


class Orchestrator:
    def __init__(
        self,
        road: RoadConfig,
        model: DuelingNetwork | None,
        params: SafetyParams = SafetyParams(),
        staleness_ms: float = DEFAULT_STALENESS_MS,
        workers: int = 1,
        log_dir: str | Path | None = None,
        horizon_ticks: int = MAX_HORIZON,
    ):
        self.road = road
        self.model = model
        self.params = params
        self.horizon_ticks = horizon_ticks
        self.kb = KnowledgeBase(staleness_ms)
        self.store = RecommendationStore()
        self.counters: Counter = Counter()
        self.scenes: dict[str, Scene] = {}
        self.last_snapshot: dict[str, float] = {}
        self._seq: Counter = Counter()
        self._sim_time: float | None = None
        self._max_seen = 0.0
        self._lock = threading.Lock()
        self._sinks: list[Callable[[str], None]] = []
        if log_dir:
            Path(log_dir).mkdir(parents=True, exist_ok=True)
        self.events = EventLog(Path(log_dir) / "orchestrator.ndjson" if log_dir else None)
        self.mediator = Mediator(self._compute, workers)

    # ---------------------------------------------------------------- time

    def now(self) -> float:
        if self._sim_time is not None:
            return self._sim_time
        return time.monotonic_ns() / 1e6

    @property
    def simulated(self) -> bool:
        return self._sim_time is not None

    # ---------------------------------------------------------------- sinks

    def add_sink(self, send: Callable[[str], None]) -> None:
        with self._lock:
            self._sinks.append(send)

    def remove_sink(self, send: Callable[[str], None]) -> None:
        with self._lock:
            if send in self._sinks:
                self._sinks.remove(send)

    def _emit(self, doc: dict) -> None:
        line = encode(doc)
        with self._lock:
            sinks = list(self._sinks)
        for send in sinks:
            for attempt in (1, 2):
                try:
                    send(line)
                    break
                except OSError as exc:
                    if attempt == 2:
                        self.counters["emit_dropped"] += 1
                        log.warning("dropping %s after retry: %s", doc.get("recommendation_id"), exc)

    # ---------------------------------------------------------------- ingest

    def handle_line(self, raw: bytes | str) -> list[dict]:
        """Process one wire line; returns replies for the sending connection only."""
        self.counters["lines"] += 1
        try:
            msg = parse_line(raw)
        except Reject as rej:
            self.counters[f"rejected_{rej.reason}"] += 1
            self.counters["rejected"] += 1
            log.info("rejected line: %s", rej)
            self.events.write(t=self._log_time(), event="reject", reason=rej.reason)
            return []
        return self.handle(msg)

    def _log_time(self):
        return self._sim_time if self._sim_time is not None else None

    def handle(self, msg) -> list[dict]:
        if isinstance(msg, VehicleUpdate):
            self._on_update(msg)
            return []
        if isinstance(msg, ManeuverFeedback):
            self.handle_feedback(msg)
            return []
        if isinstance(msg, Clock):
            with self._lock:
                if self._sim_time is None:
                    self.mediator.deferred = True
                self._sim_time = max(msg.sim_time_ms, self._sim_time or 0.0)
            self.counters["evicted"] += self.kb.sweep(self.now())
            return []
        if isinstance(msg, Sync):
            for doc in self.mediator.flush():
                self._emit(doc)
            return [{"type": "sync_ack", "seq": msg.seq}]
        if isinstance(msg, SubscriptionAck):
            self.counters["subscription_acks"] += 1
            return []
        raise TypeError(f"unhandled message {msg!r}")

    def _on_update(self, upd: VehicleUpdate) -> None:
        try:
            state = upd.to_state(self.road.origin)
        except ValidationError as exc:
            self.counters["rejected_validation"] += 1
            self.counters["rejected"] += 1
            log.info("rejected update: %s", exc)
            return
        self.counters["updates"] += 1
        if not self.kb.upsert(state):
            self.counters["updates_out_of_order"] += 1
            return
        with self._lock:
            self._max_seen = max(self._max_seen, state.timestamp)
        if not self.simulated:
            self.counters["evicted"] += self.kb.sweep(self._max_seen)
        for target in self._targets_for(state.vehicle_id):
            for doc in self.mediator.submit(target, Trigger("update", state.vehicle_id)):
                self._emit(doc)

    def _targets_for(self, vehicle_id: str) -> list[str]:
        snap = self.kb.snapshot()
        out = []
        for m in merging_vehicles(snap, self.road):
            if m == vehicle_id:
                out.append(m)
                continue
            scene = find_scene(m, snap, self.road, self.scenes.get(m))
            if scene and vehicle_id in (scene.preceding, scene.following):
                out.append(m)
        return out

    # ---------------------------------------------------------------- feedback

    def handle_feedback(self, fb: ManeuverFeedback) -> None:
        now = self.now()
        status = FEEDBACK_TO_STATUS[fb.status]
        try:
            env = self.store.transition(fb.recommendation_id, status, now)
        except InvalidTransition as exc:
            self.counters["feedback_ignored"] += 1
            log.info("feedback ignored: %s", exc)
            self.events.write(t=self._log_time(), event="feedback", recommendation_id=fb.recommendation_id,
                              status=fb.status, applied=False)
            return
        if env is None:
            self.counters["feedback_unknown"] += 1
            log.info("feedback for unknown recommendation %s", fb.recommendation_id)
            self.events.write(t=self._log_time(), event="feedback", recommendation_id=fb.recommendation_id,
                              status=fb.status, applied=False)
            return
        self.counters[f"feedback_{fb.status}"] += 1
        self.events.write(t=self._log_time(), event="feedback", recommendation_id=fb.recommendation_id,
                          status=fb.status, applied=True)
        if status in (Status.REJECTED, Status.ABORTED):
            merging = env.scene[0]
            self.counters["recalculations"] += 1
            for doc in self.mediator.submit(merging, Trigger("recalculation", env.target)):
                self._emit(doc)

    # ---------------------------------------------------------------- mediation

    def _compute(self, target: str, trigger: Trigger) -> list[dict]:
        now = self.now()
        with self._lock:
            if now <= self.last_snapshot.get(target, -1.0):
                self.counters["computations_skipped"] += 1
                return []
            self.last_snapshot[target] = now
        snap = self.kb.snapshot(self.road.boundary)
        scene = find_scene(target, snap, self.road, self.scenes.get(target))
        self.counters["computations"] += 1
        record = dict(t=self._log_time(), event="computation", target=target, snapshot=now, cause=trigger.cause)
        if scene is None or scene.preceding is None or scene.following is None:
            self.events.write(**record, outcome="no_scene")
            return []
        with self._lock:
            self.scenes[target] = scene
        if self.model is None:
            log.error("model unavailable; no recommendation for %s", target)
            self.counters["model_unavailable"] += 1
            self.events.write(**record, outcome="model_unavailable")
            return []
        m = snap[target]
        # P and F may lag M by up to one report period; roll them forward to M's clock
        p, f = (extrapolate(snap[k], m.timestamp) for k in (scene.preceding, scene.following))
        rec = recommend_trajectory(
            self.model,
            MergeSnapshot(m, p, f, self.road.polyline, self.road.merge_point, self.road.lane_width, self.road.taper_length),
            self.horizon_ticks,
            self.params,
        )
        # a rollout cut off by the horizon is still useful guidance; the checker vets its end state
        if rec.empty or not (rec.success or rec.reason == "horizon"):
            self.events.write(**record, outcome=rec.reason or "no_recommendation")
            return []
        axis = self.road.polyline.tangent(rec.waypoints[-1].x, rec.waypoints[-1].y)
        check = check_recommendation(
            rec, snap, self.params, preceding=scene.preceding, following=scene.following, lane_axis=axis
        )
        with self._lock:
            self._seq[target] += 1
            rid = f"{target}-r{self._seq[target]}"
        self.events.write(**record, outcome="checked", recommendation_id=rid, passed=check.passed,
                          reason=check.reason)
        if not check:
            self.counters[f"check_failed_{check.reason}"] += 1
            return []
        out = []
        extra = {"snapshot_ms": rec.snapshot_time, "created_ms": now, "role": "merging", "completes_merge": rec.success}
        out.append(self._envelope(rid, target, rec, rec.waypoints, now, scene, extra))
        if rec.follower_waypoints:
            fid = f"{rid}-follower"
            out.append(self._envelope(fid, scene.following, rec, rec.follower_waypoints, now, scene,
                                      {**extra, "role": "following", "parent_id": rid}))
        return out

    def _envelope(self, rid, target, rec, waypoints, now, scene, extra) -> dict:
        env = RecommendationEnvelope(rid, target, rec, tuple(waypoints), now, (scene.merging, scene.preceding, scene.following))
        superseded = self.store.add(env)
        if superseded is not None:
            self.counters["superseded"] += 1
        self.counters["emitted"] += 1
        self.events.write(t=self._log_time(), event="emit", recommendation_id=rid, target=target)
        return recommendation_message(rid, target, waypoints, self.road.origin, extra)

    def close(self) -> None:
        self.mediator.close()
        self.events.close()

    def stats(self) -> dict:
        return dict(sorted(self.counters.items()))
