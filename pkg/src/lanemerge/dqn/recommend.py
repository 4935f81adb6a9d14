"""Greedy policy rollouts turned into timed waypoint recommendations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Polyline, SafetyParams, VehicleState, wrap_heading
from .env import DT, DegenerateEpisode, LaneVehicle, MergeEpisode, ScenarioRunner, advance, check_outcome
from .network import DuelingNetwork

TICK_MS = int(round(DT * 1000))
MAX_HORIZON = 70


@dataclass(frozen=True)
class Waypoint:
    timestamp: int
    x: float
    y: float
    speed: float
    acceleration: float
    heading: float

    def to_json(self) -> dict:
        return {
            "timestamp": self.timestamp, "x": self.x, "y": self.y, "speed": self.speed,
            "acceleration": self.acceleration, "heading": self.heading,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Waypoint":
        return cls(int(d["timestamp"]), float(d["x"]), float(d["y"]), float(d["speed"]),
                   float(d["acceleration"]), float(d["heading"]))


@dataclass(frozen=True)
class Recommendation:
    """Waypoints for the merging vehicle and, optionally, a slow-down plan for the follower.

    ``success`` is true only when the rollout ended with M in a safe slot;
    otherwise ``reason`` names what went wrong.
    """

    target_id: str
    waypoints: tuple[Waypoint, ...]
    success: bool
    reason: str | None = None
    follower_id: str | None = None
    follower_waypoints: tuple[Waypoint, ...] = ()
    snapshot_time: int = 0

    @property
    def empty(self) -> bool:
        return not self.waypoints

    def to_json(self) -> dict:
        return {
            "target_id": self.target_id,
            "waypoints": [w.to_json() for w in self.waypoints],
            "success": self.success,
            "reason": self.reason,
            "follower_id": self.follower_id,
            "follower_waypoints": [w.to_json() for w in self.follower_waypoints],
            "snapshot_time": self.snapshot_time,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Recommendation":
        return cls(
            d["target_id"],
            tuple(Waypoint.from_json(w) for w in d["waypoints"]),
            bool(d["success"]),
            d.get("reason"),
            d.get("follower_id"),
            tuple(Waypoint.from_json(w) for w in d.get("follower_waypoints", [])),
            int(d.get("snapshot_time", 0)),
        )


@dataclass(frozen=True)
class MergeSnapshot:
    """Plane-coordinate view of one merge scene.

    ``merge_point`` marks where the acceleration lane ends; ``centerline``
    is the target lane's centre.
    """

    m: VehicleState
    p: VehicleState | None
    f: VehicleState | None
    centerline: Polyline
    merge_point: tuple[float, float]
    lane_width: float = 3.66
    taper_length: float = 60.0


class _LaneFrame:
    """Maps plane states into the environment frame, mirroring left-side approaches."""

    def __init__(self, snap: MergeSnapshot):
        self.line = snap.centerline
        _, e_m = self.line.to_frenet(snap.m.x, snap.m.y)
        self.side = 1.0 if e_m > 0 else -1.0

    def lane_heading(self, s: float) -> float:
        x, y = self.line.from_frenet(s, 0.0)
        return self.line.heading_at(x, y)

    def to_lane(self, st: VehicleState) -> LaneVehicle:
        s, e = self.line.to_frenet(st.x, st.y)
        delta = wrap_heading(st.heading - self.lane_heading(s) + 180.0) - 180.0
        if self.side > 0:
            e, delta = -e, -delta
        return LaneVehicle(s, e, st.speed, st.acceleration, delta, st.length, st.width)

    def to_waypoint(self, v: LaneVehicle, t: int) -> Waypoint:
        e, delta = (-v.e, -v.delta) if self.side > 0 else (v.e, v.delta)
        x, y = self.line.from_frenet(v.s, e)
        return Waypoint(t, x, y, v.v, v.a, wrap_heading(self.lane_heading(v.s) + delta))


def recommend_trajectory(
    net: DuelingNetwork,
    snap: MergeSnapshot,
    horizon_ticks: int = MAX_HORIZON,
    params: SafetyParams = SafetyParams(),
) -> Recommendation:
    """Greedy rollout of ``net`` from the snapshot, one waypoint per 100 ms tick."""
    if not 1 <= horizon_ticks <= MAX_HORIZON:
        raise ValueError(f"horizon_ticks must lie in [1, {MAX_HORIZON}]")
    t0 = snap.m.timestamp
    if snap.p is None:
        return Recommendation(snap.m.vehicle_id, (), False, "no_preceding", snapshot_time=t0)
    if snap.f is None:
        return Recommendation(snap.m.vehicle_id, (), False, "no_following", snapshot_time=t0)
    frame = _LaneFrame(snap)
    m, p, f = frame.to_lane(snap.m), frame.to_lane(snap.p), frame.to_lane(snap.f)
    merge_s = snap.centerline.to_frenet(*snap.merge_point)[0]
    ep = MergeEpisode(m, p, f, merge_s, merge_s, snap.lane_width, horizon_ticks, taper_length=snap.taper_length)
    initial = check_outcome(m, p, f, ep, params)
    if initial == "success":
        # already merged: hold speed and lane for one tick
        return Recommendation(snap.m.vehicle_id, (frame.to_waypoint(advance(m, 0.0), t0 + TICK_MS),), True, snapshot_time=t0)
    if initial is not None:
        return Recommendation(snap.m.vehicle_id, (), False, initial, snapshot_time=t0)
    try:
        runner = ScenarioRunner(ep, params)
    except DegenerateEpisode:
        return Recommendation(snap.m.vehicle_id, (), False, "degenerate", snapshot_time=t0)

    state = runner.state()
    outcome = None
    while outcome is None and runner.t < horizon_ticks:
        res = runner.step(int(np.argmax(net.q_values(state)[0])))
        state, outcome = res.state, res.outcome
    waypoints = tuple(frame.to_waypoint(mk, t0 + TICK_MS * (k + 1)) for k, (mk, _, _) in enumerate(runner.history))
    follower = ()
    if any(a != 0.0 for a in runner.follower_accels):
        follower = tuple(frame.to_waypoint(fk, t0 + TICK_MS * (k + 1)) for k, (_, _, fk) in enumerate(runner.history))
    success = outcome == "success"
    return Recommendation(
        snap.m.vehicle_id,
        waypoints,
        success,
        None if success else (outcome or "horizon"),
        snap.f.vehicle_id if follower else None,
        follower,
        snapshot_time=t0,
    )
