"""Safety gate applied to every recommendation before it leaves the orchestrator."""

from __future__ import annotations

from dataclasses import dataclass

from ..dqn.recommend import Recommendation
from ..geometry import SafetyParams, StalenessError, VehicleState, heading_vector, is_safe_slot

ACCEL_BOUND = 4.5


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.passed


def extrapolate(state: VehicleState, timestamp: int) -> VehicleState:
    """Constant-velocity prediction along the vehicle's heading."""
    dt = (timestamp - state.timestamp) / 1000.0
    ux, uy = heading_vector(state.heading)
    return state.evolve(timestamp=timestamp, x=state.x + state.speed * dt * ux, y=state.y + state.speed * dt * uy)


def check_recommendation(
    rec: Recommendation,
    kb_snapshot: dict[str, VehicleState],
    params: SafetyParams = SafetyParams(),
    *,
    preceding: str,
    following: str,
    lane_axis: tuple[float, float] | None = None,
    accel_bound: float = ACCEL_BOUND,
) -> CheckResult:
    """Pass iff accelerations stay within bounds and M's final waypoint sits in a safe slot.

    P and F are extrapolated at constant velocity to the final waypoint's
    time. The lane axis defaults to P's heading.
    """
    if rec.empty:
        return CheckResult(False, "empty")
    for w in (*rec.waypoints, *rec.follower_waypoints):
        if abs(w.acceleration) > accel_bound:
            return CheckResult(False, "accel_bound")
    m0, p0, f0 = (kb_snapshot.get(k) for k in (rec.target_id, preceding, following))
    if m0 is None or p0 is None or f0 is None:
        return CheckResult(False, "missing_vehicle")
    last = rec.waypoints[-1]
    m = VehicleState(
        m0.vehicle_id, last.timestamp, last.x, last.y, max(0.0, last.speed), last.acceleration,
        last.heading, length=m0.length, width=m0.width,
    )
    axis = lane_axis or heading_vector(p0.heading)
    try:
        ok = is_safe_slot(m, extrapolate(p0, last.timestamp), extrapolate(f0, last.timestamp), params, axis)
    except StalenessError:
        return CheckResult(False, "stale")
    return CheckResult(True) if ok else CheckResult(False, "unsafe_slot")
