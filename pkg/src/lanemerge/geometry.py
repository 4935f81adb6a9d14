"""Shared kinematic types, local-plane projection, gap geometry and the safe-slot predicate."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

EARTH_RADIUS_M = 6_371_000.0
ALIGNMENT_TOLERANCE_MS = 100


class ValidationError(ValueError):
    """A value violates a domain invariant."""


class StalenessError(ValueError):
    """Two states that must describe the same instant are too far apart in time."""


class Source(str, Enum):
    ONBOARD = "onboard"
    CAMERA = "camera"
    FUSED = "fused"


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: str
    timestamp: int  # ms since scenario epoch
    x: float
    y: float
    speed: float
    acceleration: float = 0.0
    heading: float = 0.0  # degrees clockwise from north
    lane_id: int = 0
    length: float = 4.0
    width: float = 1.8
    connected: bool = True
    source: Source = Source.ONBOARD
    lat: float | None = None
    lon: float | None = None

    def __post_init__(self) -> None:
        if self.speed < 0:
            raise ValidationError(f"speed must be >= 0, got {self.speed}")
        if self.length <= 0 or self.width <= 0:
            raise ValidationError("vehicle dimensions must be positive")
        if not 0.0 <= self.heading < 360.0:
            raise ValidationError(f"heading must be in [0, 360), got {self.heading}")
        if self.timestamp < 0:
            raise ValidationError("timestamp must be >= 0")
        for name in ("x", "y", "speed", "acceleration", "heading"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def evolve(self, **changes) -> "VehicleState":
        return replace(self, **changes)


@dataclass(frozen=True)
class MergeTriple:
    merging: str
    preceding: str
    following: str
    target_lane: int
    merge_point: tuple[float, float]
    merge_frame_index: int

    def __post_init__(self) -> None:
        if len({self.merging, self.preceding, self.following}) != 3:
            raise ValidationError("M, P and F must be distinct vehicles")
        if not 0 <= self.merge_frame_index <= 69:
            raise ValidationError("merge_frame_index must lie in [0, 69]")


@dataclass(frozen=True)
class SafetyParams:
    standstill_gap: float = 1.0  # s0, metres
    time_headway: float = 0.5  # tau, seconds

    def __post_init__(self) -> None:
        if self.standstill_gap <= 0:
            raise ValidationError("standstill gap must be > 0")
        if self.time_headway < 0:
            raise ValidationError("time headway must be >= 0")

    def required_gap(self, speed: float) -> float:
        return self.standstill_gap + self.time_headway * speed


def wrap_heading(deg: float) -> float:
    """Map any angle to [0, 360)."""
    h = math.fmod(deg, 360.0)
    if h < 0:
        h += 360.0
    # fmod of tiny negatives can round to exactly 360.0
    return 0.0 if h >= 360.0 else h


def signed_angle(deg: float) -> float:
    """Map any angle to [-180, 180)."""
    return (deg + 180.0) % 360.0 - 180.0


def heading_vector(heading_deg: float) -> tuple[float, float]:
    """Unit (east, north) vector for a clockwise-from-north heading."""
    r = math.radians(heading_deg)
    return (math.sin(r), math.cos(r))


def vector_heading(dx: float, dy: float) -> float:
    return wrap_heading(math.degrees(math.atan2(dx, dy)))


def project_coordinates(lat: float, lon: float, origin: tuple[float, float]) -> tuple[float, float]:
    """Equirectangular projection of (lat, lon) into metres east/north of ``origin``.

    Error stays below a centimetre for scenes within ~2 km of the origin.
    """
    _check_latlon(lat, lon)
    _check_latlon(*origin)
    lat0, lon0 = origin
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return (x, y)


def unproject_coordinates(x: float, y: float, origin: tuple[float, float]) -> tuple[float, float]:
    _check_latlon(*origin)
    lat0, lon0 = origin
    lat = lat0 + math.degrees(y / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return (lat, lon)


def _check_latlon(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
        raise ValidationError(f"coordinates out of range: ({lat}, {lon})")


def check_aligned(*states: VehicleState, tolerance_ms: int = ALIGNMENT_TOLERANCE_MS) -> None:
    ts = [s.timestamp for s in states]
    if max(ts) - min(ts) > tolerance_ms:
        raise StalenessError(f"states span {max(ts) - min(ts)} ms (> {tolerance_ms} ms)")


def along(state: VehicleState, axis: tuple[float, float]) -> float:
    return state.x * axis[0] + state.y * axis[1]


def longitudinal_gap(
    rear_vehicle: VehicleState,
    front_vehicle: VehicleState,
    lane_axis: tuple[float, float] = (0.0, 1.0),
) -> float:
    """Bumper-to-bumper distance from ``rear_vehicle`` to ``front_vehicle`` along ``lane_axis``.

    Negative when the two bodies overlap.
    """
    check_aligned(rear_vehicle, front_vehicle)
    centre = along(front_vehicle, lane_axis) - along(rear_vehicle, lane_axis)
    return centre - (front_vehicle.length + rear_vehicle.length) / 2.0


def is_safe_slot(
    m: VehicleState,
    p: VehicleState,
    f: VehicleState,
    params: SafetyParams = SafetyParams(),
    lane_axis: tuple[float, float] = (0.0, 1.0),
) -> bool:
    check_aligned(m, p, f)
    sm, sp, sf = along(m, lane_axis), along(p, lane_axis), along(f, lane_axis)
    if not sf < sm < sp:
        return False
    return (
        longitudinal_gap(m, p, lane_axis) >= params.required_gap(m.speed)
        and longitudinal_gap(f, m, lane_axis) >= params.required_gap(f.speed)
    )


class Polyline:
    """Lane centreline in the local plane; supplies stations, offsets and tangents."""

    def __init__(self, points: Sequence[Sequence[float]]):
        if len(points) < 2:
            raise ValidationError("a lane polyline needs at least two points")
        self.points = [(float(p[0]), float(p[1])) for p in points]
        self._stations = [0.0]
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            seg = math.hypot(x1 - x0, y1 - y0)
            if seg == 0:
                raise ValidationError("repeated polyline vertex")
            self._stations.append(self._stations[-1] + seg)

    @property
    def length(self) -> float:
        return self._stations[-1]

    def _nearest_segment(self, x: float, y: float) -> tuple[int, float]:
        best = (math.inf, 0, 0.0)
        for i, ((x0, y0), (x1, y1)) in enumerate(zip(self.points, self.points[1:])):
            dx, dy = x1 - x0, y1 - y0
            seg2 = dx * dx + dy * dy
            t = ((x - x0) * dx + (y - y0) * dy) / seg2
            # extend the first and last segments so stations beyond the ends stay linear
            if i > 0:
                t = max(t, 0.0)
            if i < len(self.points) - 2:
                t = min(t, 1.0)
            px, py = x0 + t * dx, y0 + t * dy
            d = math.hypot(x - px, y - py)
            if d < best[0] - 1e-12:
                best = (d, i, t)
        return best[1], best[2]

    def tangent(self, x: float, y: float) -> tuple[float, float]:
        i, _ = self._nearest_segment(x, y)
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        n = math.hypot(x1 - x0, y1 - y0)
        return ((x1 - x0) / n, (y1 - y0) / n)

    def heading_at(self, x: float, y: float) -> float:
        return vector_heading(*self.tangent(x, y))

    def to_frenet(self, x: float, y: float) -> tuple[float, float]:
        """(station along the line, signed lateral offset, positive to the left)."""
        i, t = self._nearest_segment(x, y)
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        seg = self._stations[i + 1] - self._stations[i]
        ux, uy = (x1 - x0) / seg, (y1 - y0) / seg
        s = self._stations[i] + t * seg
        lateral = -(x - x0) * uy + (y - y0) * ux
        return s, lateral

    def from_frenet(self, s: float, lateral: float) -> tuple[float, float]:
        i = 0
        while i < len(self.points) - 2 and s > self._stations[i + 1]:
            i += 1
        (x0, y0), (x1, y1) = self.points[i], self.points[i + 1]
        seg = self._stations[i + 1] - self._stations[i]
        ux, uy = (x1 - x0) / seg, (y1 - y0) / seg
        d = s - self._stations[i]
        return (x0 + d * ux - lateral * uy, y0 + d * uy + lateral * ux)
