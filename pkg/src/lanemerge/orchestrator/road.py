"""Static road description the orchestrator needs to recognise merge scenes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..geometry import Polyline, VehicleState
from .messages import Boundary


@dataclass(frozen=True)
class RoadConfig:
    """Target-lane centreline and merge geometry in local metres around ``origin``."""

    origin: tuple[float, float]
    boundary: Boundary
    centerline: tuple[tuple[float, float], ...]
    merge_point: tuple[float, float]
    target_lane_id: int = 1
    merge_lane_id: int = 2
    lane_width: float = 3.66
    taper_length: float = 60.0
    polyline: Polyline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "polyline", Polyline(self.centerline))

    @property
    def merge_station(self) -> float:
        return self.polyline.to_frenet(*self.merge_point)[0]

    def station(self, st: VehicleState) -> float:
        return self.polyline.to_frenet(st.x, st.y)[0]

    def to_json(self) -> dict:
        return {
            "origin": list(self.origin),
            "boundary": self.boundary.to_json(),
            "centerline": [list(p) for p in self.centerline],
            "merge_point": list(self.merge_point),
            "target_lane_id": self.target_lane_id,
            "merge_lane_id": self.merge_lane_id,
            "lane_width": self.lane_width,
            "taper_length": self.taper_length,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RoadConfig":
        return cls(
            origin=(float(d["origin"][0]), float(d["origin"][1])),
            boundary=Boundary.from_json(d["boundary"]),
            centerline=tuple((float(x), float(y)) for x, y in d["centerline"]),
            merge_point=(float(d["merge_point"][0]), float(d["merge_point"][1])),
            target_lane_id=int(d.get("target_lane_id", 1)),
            merge_lane_id=int(d.get("merge_lane_id", 2)),
            lane_width=float(d.get("lane_width", 3.66)),
            taper_length=float(d.get("taper_length", 60.0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RoadConfig":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Scene:
    merging: str
    preceding: str | None
    following: str | None


def merging_vehicles(states: dict[str, VehicleState], road: RoadConfig) -> list[str]:
    """Merge-lane vehicles that have not yet passed the merge point, sorted by id."""
    end = road.merge_station
    return sorted(k for k, s in states.items() if s.lane_id == road.merge_lane_id and road.station(s) <= end)


def find_scene(
    merging: str,
    states: dict[str, VehicleState],
    road: RoadConfig,
    previous: Scene | None = None,
) -> Scene | None:
    """Pick the target-lane slot for ``merging``.

    A previous choice is kept while both of its vehicles are still known.
    Otherwise the consecutive pair whose slot midpoint is nearest to M wins;
    with a single target-lane vehicle the missing role is left empty.
    """
    m = states.get(merging)
    if m is None:
        return None
    if previous and previous.preceding in states and previous.following in states:
        return previous
    lane = sorted(
        (road.station(s), k) for k, s in states.items() if s.lane_id == road.target_lane_id and k != merging
    )
    if not lane:
        return None
    s_m = road.station(m)
    if len(lane) == 1:
        s, k = lane[0]
        return Scene(merging, k, None) if s > s_m else Scene(merging, None, k)
    best = None
    for (s_f, f), (s_p, p) in zip(lane, lane[1:]):
        mid = 0.5 * ((s_p - states[p].length / 2) + (s_f + states[f].length / 2))
        key = (abs(mid - s_m), s_f)
        if best is None or key < best[0]:
            best = (key, Scene(merging, p, f))
    return best[1]
