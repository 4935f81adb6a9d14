"""NDJSON wire protocol shared by the orchestrator, the gateway and the simulator.

Every message is one UTF-8 JSON object terminated by LF. Two extension
messages, ``clock`` and ``sync``, let a simulator drive the orchestrator in
simulated time: ``clock`` sets the current time, ``sync`` asks the
orchestrator to finish pending work and answer with ``sync_ack``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from ..dqn.recommend import Waypoint
from ..geometry import Source, VehicleState, project_coordinates, unproject_coordinates

MAX_LINE_BYTES = 64 * 1024
MAX_SAFE_INT = 2**53

WIRE_SOURCES = {"obu": Source.ONBOARD, "camera": Source.CAMERA, "fused": Source.FUSED}
SOURCE_WIRE = {v: k for k, v in WIRE_SOURCES.items()}
FEEDBACK_STATUSES = ("accept", "reject", "abort")


class LineTooLong(ConnectionError):
    """A line exceeded the frame limit; the connection must be closed."""


class Reject(ValueError):
    """A single line was unusable; the connection stays open."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class Boundary:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def contains(self, lat: float, lon: float) -> bool:
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon

    def to_json(self) -> dict:
        return {"min_lat": self.min_lat, "min_lon": self.min_lon, "max_lat": self.max_lat, "max_lon": self.max_lon}

    @classmethod
    def from_json(cls, d: dict) -> "Boundary":
        b = cls(*(float(d[k]) for k in ("min_lat", "min_lon", "max_lat", "max_lon")))
        if b.min_lat > b.max_lat or b.min_lon > b.max_lon:
            raise ValueError("boundary minimum exceeds maximum")
        return b


@dataclass(frozen=True)
class VehicleUpdate:
    uuid: str
    timestamp_ms: int
    lat: float
    lon: float
    speed_mps: float
    acceleration_mps2: float
    heading_deg: float
    lane_id: int
    length_m: float
    width_m: float
    connected: bool
    source: str

    def to_state(self, origin: tuple[float, float]) -> VehicleState:
        x, y = project_coordinates(self.lat, self.lon, origin)
        return VehicleState(
            self.uuid, self.timestamp_ms, x, y, self.speed_mps, self.acceleration_mps2, self.heading_deg,
            self.lane_id, self.length_m, self.width_m, self.connected, WIRE_SOURCES[self.source],
            lat=self.lat, lon=self.lon,
        )

    @classmethod
    def from_state(cls, st: VehicleState, origin: tuple[float, float]) -> "VehicleUpdate":
        lat, lon = unproject_coordinates(st.x, st.y, origin)
        return cls(
            st.vehicle_id, int(st.timestamp), lat, lon, st.speed, st.acceleration, st.heading,
            st.lane_id, st.length, st.width, st.connected, SOURCE_WIRE[Source(st.source)],
        )

    def to_json(self) -> dict:
        return {"type": "vehicle_update", **{k: getattr(self, k) for k in _UPDATE_FIELDS}}


_UPDATE_FIELDS = (
    "uuid", "timestamp_ms", "lat", "lon", "speed_mps", "acceleration_mps2", "heading_deg",
    "lane_id", "length_m", "width_m", "connected", "source",
)


@dataclass(frozen=True)
class ManeuverFeedback:
    recommendation_id: str
    status: str

    def to_json(self) -> dict:
        return {"type": "maneuver_feedback", "recommendation_id": self.recommendation_id, "status": self.status}


@dataclass(frozen=True)
class SubscriptionAck:
    boundary: Boundary | None = None

    def to_json(self) -> dict:
        d = {"type": "subscription_ack"}
        if self.boundary is not None:
            d["boundary"] = self.boundary.to_json()
        return d


@dataclass(frozen=True)
class Clock:
    sim_time_ms: float

    def to_json(self) -> dict:
        return {"type": "clock", "sim_time_ms": self.sim_time_ms}


@dataclass(frozen=True)
class Sync:
    seq: int

    def to_json(self) -> dict:
        return {"type": "sync", "seq": self.seq}


def _number(d: dict, key: str, *, lo: float = -math.inf, hi: float = math.inf, lo_open=False, hi_open=False) -> float:
    if key not in d:
        raise Reject("validation", f"missing field {key}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise Reject("validation", f"{key} must be a number")
    try:
        v = float(v)
    except OverflowError:
        raise Reject("validation", f"{key} overflows") from None
    if not math.isfinite(v):
        raise Reject("validation", f"{key} must be finite")
    if v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi):
        raise Reject("validation", f"{key}={v} out of range")
    return v


def _integer(d: dict, key: str, lo: int | None = None) -> int:
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise Reject("validation", f"{key} must be an integer")
    if lo is not None and v < lo:
        raise Reject("validation", f"{key}={v} below {lo}")
    if abs(v) > MAX_SAFE_INT:
        raise Reject("validation", f"{key} exceeds the exactly representable range")
    return v


def _string(d: dict, key: str) -> str:
    v = d.get(key)
    if not isinstance(v, str) or not v:
        raise Reject("validation", f"{key} must be a non-empty string")
    return v


def _parse_update(d: dict) -> VehicleUpdate:
    connected = d.get("connected")
    if not isinstance(connected, bool):
        raise Reject("validation", "connected must be a boolean")
    source = d.get("source")
    if not isinstance(source, str) or source not in WIRE_SOURCES:
        raise Reject("validation", f"unknown source {source!r}"[:200])
    return VehicleUpdate(
        uuid=_string(d, "uuid"),
        timestamp_ms=_integer(d, "timestamp_ms", 0),
        lat=_number(d, "lat", lo=-90, hi=90),
        lon=_number(d, "lon", lo=-180, hi=180),
        speed_mps=_number(d, "speed_mps", lo=0),
        acceleration_mps2=_number(d, "acceleration_mps2"),
        heading_deg=_number(d, "heading_deg", lo=0, hi=360, hi_open=True),
        lane_id=_integer(d, "lane_id"),
        length_m=_number(d, "length_m", lo=0, lo_open=True),
        width_m=_number(d, "width_m", lo=0, lo_open=True),
        connected=connected,
        source=source,
    )


def _parse_feedback(d: dict) -> ManeuverFeedback:
    status = d.get("status")
    if status not in FEEDBACK_STATUSES:
        raise Reject("validation", f"unknown feedback status {status!r}")
    return ManeuverFeedback(_string(d, "recommendation_id"), status)


def _parse_ack(d: dict) -> SubscriptionAck:
    if "boundary" not in d:
        return SubscriptionAck()
    try:
        return SubscriptionAck(Boundary.from_json(d["boundary"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise Reject("validation", f"bad boundary: {exc}") from None


_PARSERS = {
    "vehicle_update": _parse_update,
    "maneuver_feedback": _parse_feedback,
    "subscription_ack": _parse_ack,
    "clock": lambda d: Clock(_number(d, "sim_time_ms", lo=0)),
    "sync": lambda d: Sync(_integer(d, "seq")),
}


def parse_line(raw: bytes | str):
    """Decode one line into a message entity or raise :class:`Reject`."""
    if isinstance(raw, str):
        raw = raw.encode("utf-8", "surrogatepass")
    if len(raw) > MAX_LINE_BYTES:
        raise LineTooLong(f"line of {len(raw)} bytes exceeds {MAX_LINE_BYTES}")
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:  # ValueError also covers oversized ints
        raise Reject("malformed_json", str(exc)[:200]) from None
    if not isinstance(doc, dict):
        raise Reject("malformed_json", "top-level value must be an object")
    kind = doc.get("type")
    parser = _PARSERS.get(kind) if isinstance(kind, str) else None
    if parser is None:
        raise Reject("unknown_type", repr(kind)[:100])
    return parser(doc)


def encode(doc: dict) -> str:
    """Serialise one message as a compact LF-terminated line."""
    return json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n"


def recommendation_message(
    recommendation_id: str, target_uuid: str, waypoints, origin: tuple[float, float], extra: dict | None = None
) -> dict:
    """Wire form of one envelope; ``waypoints`` may be M's own or the follower's."""
    out = []
    for w in waypoints:
        lat, lon = unproject_coordinates(w.x, w.y, origin)
        out.append(
            {
                "timestamp_ms": w.timestamp, "lat": lat, "lon": lon, "speed_mps": w.speed,
                "acceleration_mps2": w.acceleration, "heading_deg": w.heading,
            }
        )
    doc = {"type": "recommendation", "recommendation_id": recommendation_id, "target_uuid": target_uuid, "waypoints": out}
    if extra:
        doc.update(extra)
    return doc


def waypoints_from_message(doc: dict, origin: tuple[float, float]) -> list[Waypoint]:
    wps = []
    for w in doc["waypoints"]:
        x, y = project_coordinates(w["lat"], w["lon"], origin)
        wps.append(Waypoint(int(w["timestamp_ms"]), x, y, w["speed_mps"], w["acceleration_mps2"], w["heading_deg"]))
    return wps


def subscription_request(boundary: Boundary) -> dict:
    return {"type": "subscription_request", "boundary": boundary.to_json()}

