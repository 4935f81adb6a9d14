"""Tick loop tying vehicles, sensing, the gateway and an orchestrator together."""

from __future__ import annotations

import json
import logging
import math
import socket
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dqn.env import LaneVehicle, lane_safe_slot
from ..geometry import SafetyParams
from ..orchestrator.messages import (
    Boundary,
    Clock,
    ManeuverFeedback,
    Sync,
    VehicleUpdate,
    encode,
    waypoints_from_message,
)
from ..orchestrator.server import LineConnection
from ..orchestrator.service import Orchestrator
from .network import Delivery, EventQueue, Gateway, Impairment
from .scenario import Scenario
from .sensing import Camera, Fusion
from .vehicles import SimVehicle, adopt, control, lock_lane, step_vehicle

log = logging.getLogger(__name__)

ORCHESTRATOR = "orchestrator"
EXIT_CODES = {"merged": 0, "violation": 1, "no_merge": 2, "aborted": 3}


class EndpointClosed(ConnectionError):
    pass


class InProcessEndpoint:
    """Drives an :class:`Orchestrator` object directly, with the same framing as TCP."""

    def __init__(self, orchestrator: Orchestrator):
        self.orch = orchestrator
        self._out: list[str] = []
        orchestrator.add_sink(self._out.append)
        self._seq = 0

    def subscription(self) -> Boundary:
        return self.orch.road.boundary

    def exchange(self, items: list[tuple[float, dict]]) -> list[dict]:
        for t, doc in items:
            self.orch.handle_line(encode(Clock(t).to_json()))
            self.orch.handle_line(encode(doc))
        self._seq += 1
        self.orch.handle_line(encode(Sync(self._seq).to_json()))
        out = [json.loads(line) for line in self._out]
        self._out.clear()
        return out

    def close(self) -> None:
        self.orch.remove_sink(self._out.append)


class TcpEndpoint:
    """Talks to a running ``lmo serve`` over NDJSON; refused connections propagate."""

    def __init__(self, address: tuple[str, int], timeout: float = 30.0):
        sock = socket.create_connection(address, timeout=timeout)
        self.conn = LineConnection(sock)
        self._seq = 0
        first = self._read()
        if first.get("type") != "subscription_request":
            raise EndpointClosed(f"expected subscription_request, got {first.get('type')!r}")
        self._boundary = Boundary.from_json(first["boundary"])

    def _read(self) -> dict:
        try:
            raw = self.conn.read_line()
        except OSError as exc:
            raise EndpointClosed(str(exc)) from exc
        if raw is None:
            raise EndpointClosed("orchestrator closed the connection")
        return json.loads(raw)

    def subscription(self) -> Boundary:
        return self._boundary

    def exchange(self, items: list[tuple[float, dict]]) -> list[dict]:
        self._seq += 1
        lines = []
        for t, doc in items:
            lines.append(encode(Clock(t).to_json()))
            lines.append(encode(doc))
        lines.append(encode(Sync(self._seq).to_json()))
        try:
            self.conn.send("".join(lines))
        except OSError as exc:
            raise EndpointClosed(str(exc)) from exc
        out = []
        while True:
            doc = self._read()
            if doc.get("type") == "sync_ack" and doc.get("seq") == self._seq:
                return out
            out.append(doc)

    def close(self) -> None:
        self.conn.close()


@dataclass
class SimulationResult:
    scenario_id: str
    outcome: str
    detail: str | None
    end_time_ms: int
    records: list[dict] = field(repr=False)
    counters: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]


def _truth_neighbours(m: SimVehicle, vehicles: list[SimVehicle], half: float):
    ahead = behind = None
    for v in vehicles:
        if v is m or v.state.e < -half:
            continue
        if v.state.s >= m.state.s and (ahead is None or v.state.s < ahead.state.s):
            ahead = v
        elif v.state.s < m.state.s and (behind is None or v.state.s > behind.state.s):
            behind = v
    return ahead, behind


def _far(s: float, v: float) -> LaneVehicle:
    return LaneVehicle(s, 0.0, v)


class Simulation:
    """One scenario run. ``run()`` returns a :class:`SimulationResult`."""

    def __init__(
        self,
        scenario: Scenario,
        endpoint,
        params: SafetyParams = SafetyParams(),
        log_path: str | Path | None = None,
    ):
        self.sc = scenario
        self.endpoint = endpoint
        self.params = params
        net_seed, cam_seed = np.random.SeedSequence(scenario.seed).spawn(2)
        self.records: list[dict] = []
        self.queue = EventQueue()
        self.gateway = Gateway(Impairment(scenario.impairment, np.random.default_rng(net_seed)), self.queue, self._log)
        self.camera = Camera(scenario.camera, np.random.default_rng(cam_seed))
        self.fusion = Fusion()
        self.vehicles = [SimVehicle.from_spec(v, scenario.road) for v in scenario.vehicles]
        self.by_id = {v.id: v for v in self.vehicles}
        self.counters: Counter = Counter()
        self.log_path = Path(log_path) if log_path else None

    def _log(self, rec: dict) -> None:
        self.records.append(rec)

    # ------------------------------------------------------------------ physics

    def _physics(self, t_next: int, k: int) -> None:
        controls = [control(v, t_next, k, self.vehicles, self.params, self.sc.road) for v in self.vehicles]
        for v, (a, d) in zip(self.vehicles, controls):
            step_vehicle(v, a, d)
            lock_lane(v, self.sc.road)

    def _judge(self) -> tuple[str, str | None] | None:
        road = self.sc.road
        half = road.lane_width / 2
        s0 = self.params.standstill_gap
        vs = self.vehicles
        for i, a in enumerate(vs):
            for b in vs[i + 1:]:
                if abs(a.state.e - b.state.e) >= 0.5 * (a.spec.width + b.spec.width):
                    continue
                lead, foll = (a, b) if a.state.s >= b.state.s else (b, a)
                if lead.state.rear - foll.state.front < s0:
                    return "violation", f"conflict:{foll.id}->{lead.id}"
        for m in vs:
            if m.spec.lane != "merge":
                continue
            st = m.state
            if st.e > half or st.e < road.ramp_edge(st.s):
                return "violation", f"off_road:{m.id}"
            if st.e < -half and st.s > road.merge_station:
                return "violation", f"ramp_end:{m.id}"
        merging = [m for m in vs if m.spec.lane == "merge"]
        if all(m.state.e >= -half for m in merging):
            for m in merging:
                p, f = _truth_neighbours(m, vs, half)
                pl = p.state if p else _far(math.inf, 0.0)
                fl = f.state if f else _far(-math.inf, 0.0)
                if not lane_safe_slot(m.state, pl, fl, self.params):
                    return "violation", f"unsafe_merge:{m.id}"
            return "merged", None
        return None

    # ------------------------------------------------------------------ sensing

    def _sense(self, t: int) -> None:
        origin = self.sc.origin
        truth = [v.plane_state(t, self.sc.road, origin) for v in self.vehicles]
        self._log({"t": t, "event": "tick", "vehicles": [
            {"id": v.id, "role": v.spec.role, "s": v.state.s, "e": v.state.e, "x": st.x, "y": st.y,
             "speed": v.state.v, "accel": v.state.a, "heading": st.heading, "lane_id": st.lane_id,
             "lat": st.lat, "lon": st.lon, "length": v.spec.length}
            for v, st in zip(self.vehicles, truth)
        ]})
        onboard = [st for st in truth if st.connected]
        cam = self.camera.observe(truth)
        fused = self.fusion.fuse(onboard, cam)
        if fused.ambiguous:
            self.counters["fusion_ambiguous"] += 1
            log.warning("ambiguous association at t=%d: %s", t, ", ".join(fused.ambiguous))
        self._log({"t": t, "event": "fusion", "pairs": fused.pairs, "ambiguous": fused.ambiguous,
                   "published": [s.vehicle_id for s in fused.states]})
        for st in fused.states:
            msg = VehicleUpdate.from_state(st, origin).to_json()
            self.gateway.publish_update(t, msg)

    # ------------------------------------------------------------------ network

    def _deliver_until(self, t_end: float) -> None:
        while True:
            d = self.queue.pop_before(t_end)
            if d is None:
                return
            if d.dest == ORCHESTRATOR:
                batch = [d]
                # consecutive orchestrator deliveries share one mediation pass
                while (nxt := self.queue.peek()) is not None and nxt.time < t_end and nxt.dest == ORCHESTRATOR:
                    batch.append(self.queue.pop_before(t_end))
                self._to_orchestrator(batch)
            else:
                self._to_vehicle(d)

    def _to_orchestrator(self, batch: list[Delivery]) -> None:
        for d in batch:
            self.gateway.delivered(d)
            self._log({"t": d.time, "event": "deliver", "seq": d.seq, "to": ORCHESTRATOR})
        out = self.endpoint.exchange([(d.time, d.message) for d in batch])
        now = batch[-1].time
        for doc in out:
            if doc.get("type") != "recommendation":
                continue
            self.counters["recommendations"] += 1
            self._log({"t": now, "event": "recommendation", "recommendation_id": doc["recommendation_id"],
                       "target": doc["target_uuid"], "role": doc.get("role"), "created_ms": doc.get("created_ms", now),
                       "accelerations": [w["acceleration_mps2"] for w in doc["waypoints"]]})
            self.gateway.send(now, doc["target_uuid"], doc, ORCHESTRATOR)

    def _to_vehicle(self, d: Delivery) -> None:
        self.gateway.delivered(d)
        self._log({"t": d.time, "event": "deliver", "seq": d.seq, "to": d.dest})
        veh = self.by_id.get(d.dest)
        if veh is None or not veh.spec.connected:
            self.counters["undeliverable"] += 1
            return
        rid = d.message["recommendation_id"]
        status = veh.spec.feedback
        if status == "accept":
            adopt(veh, rid, waypoints_from_message(d.message, self.sc.origin))
        fb = ManeuverFeedback(rid, status).to_json()
        self._log({"t": d.time, "event": "feedback", "recommendation_id": rid, "vehicle": veh.id, "status": status})
        self.gateway.send(d.time, ORCHESTRATOR, fb, veh.id)

    # ------------------------------------------------------------------ main loop

    def run(self) -> SimulationResult:
        sc = self.sc
        self._log({"t": 0, "event": "scenario", "scenario": sc.to_json()})
        self.gateway.subscribe(ORCHESTRATOR, self.endpoint.subscription())
        outcome, detail, t = "no_merge", None, 0
        try:
            for k in range(sc.ticks + 1):
                t = k * sc.tick_ms
                if k:
                    self._physics(t, k - 1)
                verdict = self._judge()
                self._sense(t)
                if verdict is not None:
                    outcome, detail = verdict
                    break
                self._deliver_until(t + sc.tick_ms)
        except EndpointClosed as exc:
            log.error("orchestrator link lost at t=%d: %s", t, exc)
            outcome, detail = "aborted", str(exc)
        counters = dict.fromkeys(("published", "routed", "delivered", "dropped", "unrouted", "recommendations"), 0)
        counters.update(self.gateway.counters + self.counters)
        counters = dict(sorted(counters.items()))
        counters["in_flight"] = len(self.queue)
        self._log({"t": t, "event": "end", "outcome": outcome, "detail": detail,
                   "exit_code": EXIT_CODES[outcome], "counters": counters})
        if self.log_path is not None:
            write_log(self.records, self.log_path)
        return SimulationResult(sc.id, outcome, detail, t, self.records, counters)


def write_log(records: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_log(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_messages(records: list[dict]) -> list[tuple[float, str, dict]]:
    """Delivered messages in delivery order as ``(time, destination, message)``."""
    sent = {r["seq"]: r for r in records if r.get("event") == "send"}
    out = []
    for r in records:
        if r.get("event") == "deliver":
            s = sent[r["seq"]]
            out.append((r["t"], r["to"], s["message"]))
    return out


def run_scenario(
    scenario: Scenario,
    orchestrator: Orchestrator | None = None,
    address: tuple[str, int] | None = None,
    log_path: str | Path | None = None,
    params: SafetyParams = SafetyParams(),
) -> SimulationResult:
    """Run against an in-process orchestrator or a TCP one at ``address``."""
    if (orchestrator is None) == (address is None):
        raise ValueError("pass exactly one of orchestrator or address")
    endpoint = InProcessEndpoint(orchestrator) if orchestrator is not None else TcpEndpoint(address)
    try:
        return Simulation(scenario, endpoint, params, log_path).run()
    finally:
        endpoint.close()
