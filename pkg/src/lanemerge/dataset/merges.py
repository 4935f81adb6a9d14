"""Lane-change detection and 70-frame M/P/F instance extraction."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from ..geometry import MergeTriple, VehicleState, along
from .ngsim import FRAME_PERIOD_MS, natural_key

FRAMES_BEFORE = 40
FRAMES_AFTER = 30
WINDOW = FRAMES_BEFORE + FRAMES_AFTER


@dataclass(frozen=True)
class LaneChangeEvent:
    vehicle_id: str
    merge_timestamp: int
    from_lane: int
    to_lane: int


class RejectReason(str, Enum):
    TRUNCATED_WINDOW = "truncated_window"
    NO_PRECEDING = "no_preceding"
    NO_FOLLOWING = "no_following"


@dataclass(frozen=True)
class Rejection:
    event: LaneChangeEvent
    reason: RejectReason


@dataclass(frozen=True)
class MergeInstance:
    triple: MergeTriple
    frames: tuple[tuple[VehicleState, VehicleState, VehicleState], ...]  # (M, P, F) per step
    lane_axis: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if len(self.frames) != WINDOW:
            raise ValueError(f"a merge instance holds exactly {WINDOW} frames")

    @property
    def instance_id(self) -> str:
        return f"{self.triple.merging}@{self.frames[self.triple.merge_frame_index][0].timestamp}"

    def m(self, i: int) -> VehicleState:
        return self.frames[i][0]

    def p(self, i: int) -> VehicleState:
        return self.frames[i][1]

    def f(self, i: int) -> VehicleState:
        return self.frames[i][2]


def detect_lane_merges(frames: Sequence[VehicleState]) -> list[LaneChangeEvent]:
    """One event per lane switch; the reference lane follows each switch."""
    events: list[LaneChangeEvent] = []
    if not frames:
        return events
    current = frames[0].lane_id
    for fr in frames[1:]:
        if fr.lane_id != current:
            events.append(LaneChangeEvent(fr.vehicle_id, fr.timestamp, current, fr.lane_id))
            current = fr.lane_id
    return events


class FrameIndex:
    """Lookup of vehicle states by vehicle and by timestamp."""

    def __init__(self, tracks: Mapping[str, Sequence[VehicleState]]):
        self.tracks = {vid: list(t) for vid, t in tracks.items()}
        self.by_time: dict[int, list[VehicleState]] = {}
        self.at: dict[tuple[str, int], VehicleState] = {}
        for vid in sorted(self.tracks, key=natural_key):
            for s in self.tracks[vid]:
                self.by_time.setdefault(s.timestamp, []).append(s)
                self.at[(vid, s.timestamp)] = s


def extract_merge_instance(
    event: LaneChangeEvent,
    index: FrameIndex,
    lane_axis: tuple[float, float] = (0.0, 1.0),
) -> MergeInstance | Rejection:
    track = index.tracks.get(event.vehicle_id, [])
    k = next((i for i, s in enumerate(track) if s.timestamp == event.merge_timestamp), None)
    if k is None or k < FRAMES_BEFORE or k + FRAMES_AFTER > len(track):
        return Rejection(event, RejectReason.TRUNCATED_WINDOW)
    window = track[k - FRAMES_BEFORE : k + FRAMES_AFTER]
    if any(b.timestamp - a.timestamp != FRAME_PERIOD_MS for a, b in zip(window, window[1:])):
        return Rejection(event, RejectReason.TRUNCATED_WINDOW)

    m_now = track[k]
    s_m = along(m_now, lane_axis)
    ahead: list[tuple[float, tuple, VehicleState]] = []
    behind: list[tuple[float, tuple, VehicleState]] = []
    for other in index.by_time.get(m_now.timestamp, []):
        if other.vehicle_id == m_now.vehicle_id or other.lane_id != event.to_lane:
            continue
        d = along(other, lane_axis) - s_m
        key = natural_key(other.vehicle_id)
        if d > 0:
            ahead.append((d, key, other))
        elif d < 0:
            behind.append((-d, key, other))
    if not ahead:
        return Rejection(event, RejectReason.NO_PRECEDING)
    if not behind:
        return Rejection(event, RejectReason.NO_FOLLOWING)
    p_id = min(ahead, key=lambda t: (t[0], t[1]))[2].vehicle_id
    f_id = min(behind, key=lambda t: (t[0], t[1]))[2].vehicle_id

    frames = []
    for m in window:
        p = index.at.get((p_id, m.timestamp))
        f = index.at.get((f_id, m.timestamp))
        if p is None or f is None:
            return Rejection(event, RejectReason.TRUNCATED_WINDOW)
        frames.append((m, p, f))
    triple = MergeTriple(
        merging=event.vehicle_id,
        preceding=p_id,
        following=f_id,
        target_lane=event.to_lane,
        merge_point=m_now.position,
        merge_frame_index=FRAMES_BEFORE,
    )
    return MergeInstance(triple, tuple(frames), tuple(lane_axis))
