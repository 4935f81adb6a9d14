"""Per-frame labels (merge feasibility, target acceleration, target heading) and features."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..geometry import SafetyParams, along, is_safe_slot, longitudinal_gap
from .merges import WINDOW, MergeInstance

FRAME_DT = 0.1

ACCEL_LIMIT = 4.5
ACCEL_BIN = 0.5
N_ACCEL_CLASSES = 19
HEADING_LIMIT = 30.0
HEADING_BIN = 5.0
N_HEADING_CLASSES = 13
TIME_TO_MERGE_CAP = 60.0

FEATURE_NAMES = tuple(
    f"{role}_{q}"
    for role in ("m", "p", "f")
    for q in ("long_rel_merge", "lat_offset", "speed", "accel")
) + ("gap_p_m", "gap_m_f", "rel_speed_p_m", "rel_speed_m_f", "time_to_merge")
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class LabeledSample:
    instance_id: str
    frame_index: int
    features: tuple[float, ...]
    merge_feasible: bool
    accel_class: int
    heading_class: int

    def __post_init__(self) -> None:
        if len(self.features) != N_FEATURES:
            raise ValueError(f"feature vector must have {N_FEATURES} entries")
        if not 0 <= self.accel_class < N_ACCEL_CLASSES:
            raise ValueError("accel_class out of range")
        if not 0 <= self.heading_class < N_HEADING_CLASSES:
            raise ValueError("heading_class out of range")

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "frame_index": self.frame_index,
            "features": list(self.features),
            "merge_feasible": self.merge_feasible,
            "accel_class": self.accel_class,
            "heading_class": self.heading_class,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LabeledSample":
        return cls(
            instance_id=doc["instance_id"],
            frame_index=int(doc["frame_index"]),
            features=tuple(float(v) for v in doc["features"]),
            merge_feasible=bool(doc["merge_feasible"]),
            accel_class=int(doc["accel_class"]),
            heading_class=int(doc["heading_class"]),
        )


def _bin(value: float, limit: float, width: float, n: int) -> int:
    v = min(max(value, -limit), limit)
    return min(int(math.floor((v + limit) / width + 1e-9)), n - 1)


def accel_class(accel: float) -> int:
    """0.5 m/s^2 bins over [-4.5, 4.5]; class 9 holds [0, 0.5)."""
    return _bin(accel, ACCEL_LIMIT, ACCEL_BIN, N_ACCEL_CLASSES)


def heading_class(rel_heading: float) -> int:
    """5 degree bins over [-30, 30]; class 6 holds [0, 5)."""
    return _bin(rel_heading, HEADING_LIMIT, HEADING_BIN, N_HEADING_CLASSES)


def _check_frame(frame_index: int) -> None:
    if not 0 <= frame_index < WINDOW:
        raise IndexError(f"frame index {frame_index} outside [0, {WINDOW - 1}]")


def label_feasibility(
    instance: MergeInstance, frame_index: int, params: SafetyParams = SafetyParams()
) -> bool:
    # Only the longitudinal coordinate enters the gap test, which places M on the
    # target lane implicitly.
    _check_frame(frame_index)
    m, p, f = instance.frames[frame_index]
    axis = instance.lane_axis
    if along(m, axis) <= along(f, axis):
        return False
    return is_safe_slot(m, p, f, params, axis)


def feasibility_labels(instance: MergeInstance, params: SafetyParams = SafetyParams()) -> list[bool]:
    return [label_feasibility(instance, i, params) for i in range(WINDOW)]


def _next_true(labels: list[bool], frame_index: int) -> int | None:
    return next((j for j in range(frame_index, WINDOW) if labels[j]), None)


def acceleration_rule(instance: MergeInstance, frame_index: int, labels: list[bool]) -> int:
    """Which of the three target-acceleration rules governs this frame.

    Rule 1 needs a later feasible frame to aim for; false frames without
    one (or with a zero time step) fall through to the positional rules.
    """
    _check_frame(frame_index)
    if not labels[frame_index]:
        t_star = _next_true(labels, frame_index)
        if t_star is not None and t_star > frame_index:
            return 1
    return 2 if frame_index < instance.triple.merge_frame_index else 3


def derive_target_acceleration(
    instance: MergeInstance,
    frame_index: int,
    params: SafetyParams = SafetyParams(),
    labels: list[bool] | None = None,
) -> float:
    labels = labels if labels is not None else feasibility_labels(instance, params)
    rule = acceleration_rule(instance, frame_index, labels)
    tm = instance.triple.merge_frame_index
    if rule == 1:
        t_star = _next_true(labels, frame_index)
        speeds = [instance.m(j).speed for j in range(frame_index, t_star + 1)]
        dt = (t_star - frame_index) * FRAME_DT
        a = (sum(speeds) / len(speeds) - instance.m(frame_index).speed) / dt
    elif rule == 2:
        accs = [instance.m(j).acceleration for j in range(frame_index, tm + 1)]
        a = sum(accs) / len(accs)
    else:
        accs = [instance.m(j).acceleration for j in range(tm, frame_index + 1)]
        a = sum(accs) / len(accs)
    return min(max(a, -ACCEL_LIMIT), ACCEL_LIMIT)


def relative_bearing(
    frm: tuple[float, float], to: tuple[float, float], lane_axis: tuple[float, float]
) -> float:
    """Bearing of ``to`` seen from ``frm``, in degrees relative to the lane direction.

    Negative values point left of the lane direction (headings grow clockwise).
    """
    dx, dy = to[0] - frm[0], to[1] - frm[1]
    if math.hypot(dx, dy) < 1e-9:
        return 0.0
    ax, ay = lane_axis
    forward = dx * ax + dy * ay
    right = dx * ay - dy * ax
    return math.degrees(math.atan2(right, forward))


def derive_target_heading(
    instance: MergeInstance,
    frame_index: int,
    params: SafetyParams = SafetyParams(),
    labels: list[bool] | None = None,
) -> float:
    labels = labels if labels is not None else feasibility_labels(instance, params)
    _check_frame(frame_index)
    here = instance.m(frame_index).position
    target = instance.triple.merge_point
    if not labels[frame_index]:
        t_star = _next_true(labels, frame_index)
        if t_star is not None:
            target = instance.m(t_star).position
    rel = relative_bearing(here, target, instance.lane_axis)
    return min(max(rel, -HEADING_LIMIT), HEADING_LIMIT)


def build_feature_vector(instance: MergeInstance, frame_index: int) -> tuple[float, ...]:
    """17 features, ordered as ``FEATURE_NAMES``."""
    _check_frame(frame_index)
    m, p, f = instance.frames[frame_index]
    ax, ay = instance.lane_axis
    mx, my = instance.triple.merge_point
    merge_s = mx * ax + my * ay
    # target-lane centreline estimated from P and F, which both drive on it
    left = lambda s: -s.x * ay + s.y * ax  # noqa: E731
    centre = (left(p) + left(f)) / 2.0
    out: list[float] = []
    for v in (m, p, f):
        out += [along(v, instance.lane_axis) - merge_s, left(v) - centre, v.speed, v.acceleration]
    remaining = merge_s - along(m, instance.lane_axis)
    if remaining <= 0:
        ttm = 0.0
    elif m.speed <= 1e-9:
        ttm = TIME_TO_MERGE_CAP
    else:
        ttm = min(remaining / m.speed, TIME_TO_MERGE_CAP)
    out += [
        longitudinal_gap(m, p, instance.lane_axis),
        longitudinal_gap(f, m, instance.lane_axis),
        p.speed - m.speed,
        m.speed - f.speed,
        ttm,
    ]
    return tuple(float(v) for v in out)


def label_instance(instance: MergeInstance, params: SafetyParams = SafetyParams()) -> list[LabeledSample]:
    labels = feasibility_labels(instance, params)
    samples = []
    for i in range(WINDOW):
        a = derive_target_acceleration(instance, i, params, labels)
        h = derive_target_heading(instance, i, params, labels)
        samples.append(
            LabeledSample(
                instance_id=instance.instance_id,
                frame_index=i,
                features=build_feature_vector(instance, i),
                merge_feasible=labels[i],
                accel_class=accel_class(a),
                heading_class=heading_class(h),
            )
        )
    return samples
