"""Scenario description: road, roster, camera, network impairment."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..geometry import Polyline, unproject_coordinates
from ..orchestrator.messages import Boundary
from ..orchestrator.road import RoadConfig

TICK_MS = 100
BEHAVIORS = ("scripted", "car_following", "agent")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Road:
    """Straight or bent target lane; the slip road runs one lane width to its right."""

    centerline: tuple[tuple[float, float], ...] = ((0.0, 0.0), (0.0, 800.0))
    lane_width: float = 3.66
    target_lane_id: int = 1
    merge_lane_id: int = 2
    merge_station: float = 300.0
    taper_length: float = 100.0

    @property
    def polyline(self) -> Polyline:
        return Polyline(self.centerline)

    def ramp_edge(self, s: float) -> float:
        """Right edge of the drivable area; the slip road narrows over the taper."""
        outer = -1.5 * self.lane_width
        if s > self.merge_station:
            return -0.5 * self.lane_width
        if self.taper_length <= 0:
            return outer
        frac = (s - (self.merge_station - self.taper_length)) / self.taper_length
        return outer + min(1.0, max(0.0, frac)) * self.lane_width


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    lane: str  # "target" or "merge"
    station: float
    speed: float
    length: float = 4.5
    width: float = 1.8
    connected: bool = True
    behavior: str = "car_following"
    desired_speed: float | None = None
    role: str = "other"  # merging | preceding | following | other
    script: tuple[float, ...] = ()  # accelerations per tick for scripted vehicles
    feedback: str = "accept"


@dataclass(frozen=True)
class CameraSpec:
    polygon: tuple[tuple[float, float], ...] = ((-15.0, 0.0), (15.0, 0.0), (15.0, 800.0), (-15.0, 800.0))
    sigma_m: float = 0.25
    clock_offset_ms: float = 0.0


@dataclass(frozen=True)
class ImpairmentSpec:
    latency_ms: float = 20.0
    jitter_ms: float = 5.0
    loss: float = 0.0


@dataclass(frozen=True)
class Scenario:
    id: str
    vehicles: tuple[VehicleSpec, ...]
    road: Road = Road()
    camera: CameraSpec = CameraSpec()
    impairment: ImpairmentSpec = ImpairmentSpec()
    origin: tuple[float, float] = (48.0, 2.0)
    duration_s: float = 40.0
    tick_ms: int = TICK_MS
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.tick_ms != TICK_MS:
            raise ScenarioError(f"tick must be {TICK_MS} ms")
        if not any(v.lane == "merge" for v in self.vehicles):
            raise ScenarioError("scenario needs at least one merging vehicle")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ScenarioError("vehicle ids must be unique")
        for v in self.vehicles:
            if v.lane not in ("target", "merge"):
                raise ScenarioError(f"{v.id}: lane must be 'target' or 'merge'")
            if v.behavior not in BEHAVIORS:
                raise ScenarioError(f"{v.id}: unknown behavior {v.behavior!r}")
            if v.speed < 0 or v.length <= 0 or v.width <= 0:
                raise ScenarioError(f"{v.id}: invalid kinematics")
            if v.feedback not in ("accept", "reject", "abort"):
                raise ScenarioError(f"{v.id}: unknown feedback policy {v.feedback!r}")
        imp = self.impairment
        if imp.latency_ms < 0 or imp.jitter_ms < 0 or not 0.0 <= imp.loss <= 1.0:
            raise ScenarioError("invalid impairment settings")
        if self.duration_s <= 0:
            raise ScenarioError("duration must be positive")

    @property
    def ticks(self) -> int:
        return int(round(self.duration_s * 1000 / self.tick_ms))

    def role(self, role: str) -> str | None:
        for v in self.vehicles:
            if v.role == role:
                return v.id
        return None

    def boundary(self, margin_m: float = 50.0) -> Boundary:
        xs = [p[0] for p in self.road.centerline]
        ys = [p[1] for p in self.road.centerline]
        corners = [
            unproject_coordinates(x, y, self.origin)
            for x in (min(xs) - margin_m, max(xs) + margin_m)
            for y in (min(ys) - margin_m, max(ys) + margin_m)
        ]
        lats, lons = [c[0] for c in corners], [c[1] for c in corners]
        return Boundary(min(lats), min(lons), max(lats), max(lons))

    def road_config(self) -> RoadConfig:
        line = self.road.polyline
        return RoadConfig(
            origin=self.origin,
            boundary=self.boundary(),
            centerline=self.road.centerline,
            merge_point=line.from_frenet(self.road.merge_station, 0.0),
            target_lane_id=self.road.target_lane_id,
            merge_lane_id=self.road.merge_lane_id,
            lane_width=self.road.lane_width,
            taper_length=self.road.taper_length,
        )

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Scenario":
        try:
            road = Road(**{**d.get("road", {}), "centerline": tuple(map(tuple, d.get("road", {}).get("centerline", Road.centerline)))})
            cam_d = d.get("camera", {})
            camera = CameraSpec(**{**cam_d, "polygon": tuple(map(tuple, cam_d.get("polygon", CameraSpec.polygon)))})
            vehicles = tuple(VehicleSpec(**{**v, "script": tuple(v.get("script", ()))}) for v in d["vehicles"])
            return cls(
                id=str(d["id"]),
                vehicles=vehicles,
                road=road,
                camera=camera,
                impairment=ImpairmentSpec(**d.get("impairment", {})),
                origin=tuple(d.get("origin", (48.0, 2.0))),
                duration_s=float(d.get("duration_s", 40.0)),
                tick_ms=int(d.get("tick_ms", TICK_MS)),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def four_vehicle_scenario(
    impairment: ImpairmentSpec = ImpairmentSpec(20.0, 5.0, 0.0),
    seed: int = 0,
    speed: float = 11.0,
    m_offset: float = 4.0,
) -> Scenario:
    """Slip-road merge with three connected vehicles and one unconnected one.

    M starts on the slip road ``m_offset`` metres from the P/F slot midpoint
    (positive is ahead), roughly alongside the slot as on a coordinated run;
    the unconnected vehicle drives well ahead of P in the target lane and is
    only seen by the camera.
    """
    road = Road(merge_station=280.0, taper_length=100.0)
    f_station = 100.0
    gap = 22.0
    p_station = f_station + 4.5 + gap
    mid = 0.5 * ((p_station - 2.25) + (f_station + 2.25))
    vehicles = (
        VehicleSpec("veh-M", "merge", mid + m_offset, speed, behavior="agent", role="merging"),
        VehicleSpec("veh-P", "target", p_station, speed, desired_speed=speed, role="preceding"),
        VehicleSpec("veh-F", "target", f_station, speed, desired_speed=speed, role="following"),
        VehicleSpec("veh-U", "target", p_station + 45.0, speed, connected=False, desired_speed=speed),
    )
    return Scenario("four-vehicle", vehicles, road, CameraSpec(), impairment, duration_s=40.0, seed=seed)


def polygon_contains(polygon, x: float, y: float) -> bool:
    """Even-odd ray casting; points on an edge count as inside for axis-aligned edges."""
    inside = False
    n = len(polygon)
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xc or math.isclose(x, xc):
                inside = not inside
    return inside
