"""KPI extraction from simulator event logs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..dqn.env import LaneVehicle, lane_safe_slot
from ..geometry import SafetyParams

KPI_KINDS = ("rtt_ms", "inter_vehicle_distance_m", "accel_mps2", "maneuver_length_s", "maneuver_length_m")


@dataclass(frozen=True)
class KpiRecord:
    kind: str
    value: float
    timestamp: float
    vehicle_id: str
    scenario_id: str

    def __post_init__(self):
        if self.kind not in KPI_KINDS:
            raise ValueError(f"unknown KPI kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise ValueError("KPI value must be finite")


def compute_ecdf(values: Iterable[float]) -> list[tuple[float, float]]:
    """Right-continuous ECDF evaluated at each distinct value."""
    xs = sorted(float(v) for v in values)
    if not xs:
        raise ValueError("ECDF needs at least one value")
    if not all(math.isfinite(x) for x in xs):
        raise ValueError("ECDF values must be finite")
    n = len(xs)
    out = []
    for i, x in enumerate(xs):
        if i + 1 < n and xs[i + 1] == x:
            continue
        out.append((x, (i + 1) / n))
    return out


def fraction_within(values: Sequence[float], lo: float, hi: float, absolute: bool = False) -> float:
    if not values:
        return math.nan
    vals = [abs(v) for v in values] if absolute else values
    return sum(lo <= v <= hi for v in vals) / len(vals)


@dataclass
class RttResult:
    samples: dict[str, float]
    unmatched: list[str]


def compute_rtt(records: Sequence[dict]) -> RttResult:
    """Recommendation emission to feedback arrival at the orchestrator, per recommendation.

    The emission is the orchestrator's response to a triggering update, so
    this spans the downlink to the vehicle and the feedback uplink.
    """
    emitted: dict[str, float] = {}
    for r in records:
        if r.get("event") == "recommendation":
            emitted.setdefault(r["recommendation_id"], float(r.get("created_ms", r["t"])))
    sent_feedback = {
        r["seq"]: r["message"]["recommendation_id"]
        for r in records
        if r.get("event") == "send" and r.get("message", {}).get("type") == "maneuver_feedback"
    }
    samples: dict[str, float] = {}
    for r in records:
        if r.get("event") == "deliver" and r.get("seq") in sent_feedback:
            rid = sent_feedback[r["seq"]]
            if rid in emitted and rid not in samples:
                samples[rid] = float(r["t"]) - emitted[rid]
    unmatched = sorted(rid for rid in emitted if rid not in samples)
    return RttResult(dict(sorted(samples.items())), unmatched)


def ticks(records: Sequence[dict]) -> list[dict]:
    return [r for r in records if r.get("event") == "tick"]


def role_ids(records: Sequence[dict]) -> dict[str, str]:
    for r in records:
        if r.get("event") == "tick":
            return {v["role"]: v["id"] for v in r["vehicles"] if v.get("role") not in (None, "other")}
    return {}


def _lane(v: dict) -> LaneVehicle:
    return LaneVehicle(v["s"], v["e"], v["speed"], v.get("accel", 0.0), 0.0, v.get("length", 4.5))


def bumper_gap(lead: dict, follow: dict) -> float:
    return (lead["s"] - lead.get("length", 4.5) / 2) - (follow["s"] + follow.get("length", 4.5) / 2)


@dataclass
class ManeuverStats:
    vehicle_id: str
    start_ms: float
    end_ms: float
    completed: bool
    length_s: float
    length_m: float
    min_gap_preceding_m: float | None
    min_gap_following_m: float | None
    gaps: list[tuple[float, float | None, float | None]] = field(default_factory=list, repr=False)


def compute_maneuver(
    records: Sequence[dict],
    merging: str,
    preceding: str | None = None,
    following: str | None = None,
    target_lane_id: int | None = None,
    params: SafetyParams = SafetyParams(),
) -> ManeuverStats:
    """Span from the first recommendation for ``merging`` to the first safe in-lane tick."""
    roles = role_ids(records)
    preceding = preceding or roles.get("preceding")
    following = following or roles.get("following")
    if target_lane_id is None:
        target_lane_id = next(
            (r["scenario"]["road"]["target_lane_id"] for r in records if r.get("event") == "scenario"), 1
        )
    tick_recs = ticks(records)
    if not tick_recs:
        raise ValueError("log has no vehicle states")
    first_rec = next(
        (float(r["t"]) for r in records if r.get("event") == "recommendation" and r.get("target") == merging), None
    )
    start = first_rec if first_rec is not None else float(tick_recs[0]["t"])
    span = [r for r in tick_recs if r["t"] >= start]
    completed, end = False, float(tick_recs[-1]["t"])
    length_m, prev = 0.0, None
    gaps = []
    for r in span:
        by = {v["id"]: v for v in r["vehicles"]}
        m = by.get(merging)
        if m is None:
            continue
        if prev is not None:
            length_m += math.hypot(m["x"] - prev["x"], m["y"] - prev["y"])
        prev = m
        p, f = by.get(preceding), by.get(following)
        gaps.append((float(r["t"]), bumper_gap(p, m) if p else None, bumper_gap(m, f) if f else None))
        if m["lane_id"] == target_lane_id and p and f and lane_safe_slot(_lane(m), _lane(p), _lane(f), params):
            completed, end = True, float(r["t"])
            break
    gp = [g for _, g, _ in gaps if g is not None]
    gf = [g for _, _, g in gaps if g is not None]
    return ManeuverStats(
        merging, start, end, completed, (end - start) / 1000.0, length_m,
        min(gp) if gp else None, min(gf) if gf else None, gaps,
    )


def recommended_accelerations(records: Sequence[dict], role: str | None = "merging") -> list[float]:
    return [
        a
        for r in records
        if r.get("event") == "recommendation" and (role is None or r.get("role") == role)
        for a in r["accelerations"]
    ]


def executed_accelerations(records: Sequence[dict]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for r in ticks(records)[1:]:
        for v in r["vehicles"]:
            out.setdefault(v["id"], []).append(v["accel"])
    return dict(sorted(out.items()))


def kpi_records(records: Sequence[dict]) -> list[KpiRecord]:
    """Flatten one run into :class:`KpiRecord` rows."""
    scenario = next((r["scenario"]["id"] for r in records if r.get("event") == "scenario"), "")
    out: list[KpiRecord] = []
    for r in ticks(records)[1:]:
        for v in r["vehicles"]:
            out.append(KpiRecord("accel_mps2", v["accel"], r["t"], v["id"], scenario))
    rtt = compute_rtt(records)
    emitted = {r["recommendation_id"]: r for r in records if r.get("event") == "recommendation"}
    for rid, value in rtt.samples.items():
        out.append(KpiRecord("rtt_ms", value, emitted[rid]["t"], emitted[rid]["target"], scenario))
    roles = role_ids(records)
    if "merging" in roles:
        man = compute_maneuver(records, roles["merging"])
        for t, gp, gf in man.gaps:
            if gp is not None:
                out.append(KpiRecord("inter_vehicle_distance_m", gp, t, roles.get("preceding", ""), scenario))
            if gf is not None:
                out.append(KpiRecord("inter_vehicle_distance_m", gf, t, roles.get("following", ""), scenario))
        out.append(KpiRecord("maneuver_length_s", man.length_s, man.end_ms, man.vehicle_id, scenario))
        out.append(KpiRecord("maneuver_length_m", man.length_m, man.end_ms, man.vehicle_id, scenario))
    return out
