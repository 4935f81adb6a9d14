"""Simulated vehicles: lane-frame kinematics plus simple drivers."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..dqn.env import MAX_HEADING_ERROR, LaneVehicle, advance
from ..dqn.recommend import Waypoint
from ..geometry import SafetyParams, Source, VehicleState, signed_angle, unproject_coordinates, wrap_heading
from .scenario import Road, VehicleSpec

HEADING_SLEW_DEG = 4.0
BRAKE = -3.0
STOP_DECEL = 1.5  # comfortable deceleration used to plan a stop at the slip-road end
CRUISE_ACCEL = 1.0
LANE_GAIN = 8.0


@dataclass
class ActiveRecommendation:
    recommendation_id: str
    waypoints: dict[int, Waypoint]
    last_time: int


@dataclass
class SimVehicle:
    spec: VehicleSpec
    state: LaneVehicle
    lane_target: float
    desired_speed: float
    active: ActiveRecommendation | None = None
    received: list[str] = field(default_factory=list)

    @property
    def id(self) -> str:
        return self.spec.id

    @classmethod
    def from_spec(cls, spec: VehicleSpec, road: Road) -> "SimVehicle":
        e = 0.0 if spec.lane == "target" else -road.lane_width
        lv = LaneVehicle(spec.station, e, spec.speed, 0.0, 0.0, spec.length, spec.width)
        desired = spec.desired_speed if spec.desired_speed is not None else spec.speed
        return cls(spec, lv, e, desired)

    def lane_id(self, road: Road) -> int:
        return road.target_lane_id if self.state.e >= -road.lane_width / 2 else road.merge_lane_id

    def plane_state(self, t: int, road: Road, origin: tuple[float, float]) -> VehicleState:
        line = road.polyline
        x, y = line.from_frenet(self.state.s, self.state.e)
        cx, cy = line.from_frenet(self.state.s, 0.0)
        heading = wrap_heading(line.heading_at(cx, cy) + self.state.delta)
        lat, lon = unproject_coordinates(x, y, origin)
        return VehicleState(
            self.id, t, x, y, self.state.v, self.state.a, heading, self.lane_id(road),
            self.spec.length, self.spec.width, self.spec.connected, Source.ONBOARD, lat=lat, lon=lon,
        )


def _overlaps(a: LaneVehicle, b: LaneVehicle) -> bool:
    return abs(a.e - b.e) < 0.5 * (a.width + b.width)


def leader_gap(veh: SimVehicle, others: list[SimVehicle]) -> tuple[float, float] | None:
    """Bumper gap and speed of the nearest laterally overlapping vehicle ahead."""
    best = None
    for o in others:
        if o is veh or o.state.s <= veh.state.s or not _overlaps(veh.state, o.state):
            continue
        gap = o.state.rear - veh.state.front
        if best is None or gap < best[0]:
            best = (gap, o.state.v)
    return best


def car_following_accel(veh: SimVehicle, others: list[SimVehicle], params: SafetyParams, road: Road) -> float:
    """Brake hard inside the time-headway gap, otherwise ease toward the desired speed."""
    v = veh.state.v
    lead = leader_gap(veh, others)
    if lead is not None and lead[0] < params.required_gap(v):
        return BRAKE
    if veh.state.e < -road.lane_width / 2:
        # unguided on the slip road: plan to stop before the taper squeezes it shut
        room = road.merge_station - road.taper_length - veh.state.front - params.standstill_gap
        if v * v / (2.0 * STOP_DECEL) > room:
            return BRAKE
    if v < veh.desired_speed - 0.05:
        return CRUISE_ACCEL
    if v > veh.desired_speed + 0.05:
        return -CRUISE_ACCEL
    return 0.0


def slew(current: float, target: float, limit: float = HEADING_SLEW_DEG) -> float:
    step = max(-limit, min(limit, target - current))
    return max(-MAX_HEADING_ERROR, min(MAX_HEADING_ERROR, current + step))


def lane_keep_delta(veh: SimVehicle) -> float:
    want = max(-25.0, min(25.0, -LANE_GAIN * (veh.lane_target - veh.state.e)))
    return slew(veh.state.delta, want)


def control(
    veh: SimVehicle, t_next: int, tick_index: int, others: list[SimVehicle], params: SafetyParams, road: Road
) -> tuple[float, float]:
    """Acceleration and heading error to apply over the tick ending at ``t_next``."""
    spec = veh.spec
    if spec.behavior == "scripted":
        accel = spec.script[tick_index] if tick_index < len(spec.script) else 0.0
        return accel, lane_keep_delta(veh)
    wp = None
    if veh.active is not None:
        wp = veh.active.waypoints.get(t_next)
        if wp is None and t_next > veh.active.last_time:
            veh.active = None
    if spec.behavior == "agent" and wp is not None:
        line = road.polyline
        cx, cy = line.from_frenet(veh.state.s, 0.0)
        target_delta = signed_angle(wp.heading - line.heading_at(cx, cy))
        return wp.acceleration, slew(veh.state.delta, target_delta)
    accel = car_following_accel(veh, others, params, road)
    if wp is not None:
        # a follower recommendation can ask for more braking, never less
        accel = min(accel, wp.acceleration)
    return accel, lane_keep_delta(veh)


def step_vehicle(veh: SimVehicle, accel: float, delta: float) -> None:
    veh.state = advance(veh.state, accel, delta)


def lock_lane(veh: SimVehicle, road: Road) -> None:
    """Once a merging car's centre enters the target lane it keeps that lane."""
    if veh.lane_target < 0 and veh.state.e >= -road.lane_width / 2:
        veh.lane_target = 0.0


def adopt(veh: SimVehicle, rid: str, waypoints: list[Waypoint]) -> None:
    wps = {w.timestamp: w for w in waypoints}
    veh.active = ActiveRecommendation(rid, wps, max(wps)) if wps else None
    veh.received.append(rid)

