"""End-to-end extraction: CSV -> merge instances -> labelled samples -> 70/20/10 split files."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import SafetyParams, Source, VehicleState, is_safe_slot
from .labels import LabeledSample, label_instance
from .merges import (
    FrameIndex,
    MergeInstance,
    Rejection,
    detect_lane_merges,
    extract_merge_instance,
)
from .ngsim import ColumnMapping, group_by_vehicle, natural_key, parse_trajectory_csv
from .split import split_instance_ids

log = logging.getLogger(__name__)

SUBSETS = ("train", "test", "validation")
MERGE_FRAME_SAFE_TARGET = 0.95


@dataclass
class ExtractionResult:
    instances: list[MergeInstance]
    rejections: list[Rejection]
    samples: list[LabeledSample]
    skipped_rows: int


def extract_instances(frames, lane_axis=(0.0, 1.0)) -> tuple[list[MergeInstance], list[Rejection]]:
    tracks = group_by_vehicle(frames)
    index = FrameIndex(tracks)
    events = []
    for vid in sorted(tracks, key=natural_key):
        events.extend(detect_lane_merges(tracks[vid]))
    events.sort(key=lambda e: (natural_key(e.vehicle_id), e.merge_timestamp))
    instances, rejections = [], []
    for ev in events:
        out = extract_merge_instance(ev, index, lane_axis)
        (rejections if isinstance(out, Rejection) else instances).append(out)
    return instances, rejections


def merge_frame_safe_fraction(instances: list[MergeInstance], params: SafetyParams) -> float:
    """Share of instances whose slot is safe at the recorded merge frame."""
    if not instances:
        return float("nan")
    ok = sum(
        is_safe_slot(*inst.frames[inst.triple.merge_frame_index], params, inst.lane_axis)
        for inst in instances
    )
    return ok / len(instances)


def run_extraction(
    csv_path: str | Path,
    mapping: ColumnMapping | None = None,
    params: SafetyParams = SafetyParams(),
) -> ExtractionResult:
    mapping = mapping or ColumnMapping()
    parsed = parse_trajectory_csv(csv_path, mapping)
    instances, rejections = extract_instances(parsed.frames, mapping.lane_axis)
    samples = [s for inst in instances for s in label_instance(inst, params)]
    return ExtractionResult(instances, rejections, samples, parsed.skipped)


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def state_to_json(s: VehicleState) -> dict:
    return {
        "id": s.vehicle_id, "t": s.timestamp, "x": s.x, "y": s.y, "v": s.speed,
        "a": s.acceleration, "h": s.heading, "lane": s.lane_id, "len": s.length, "w": s.width,
    }


def state_from_json(d: dict) -> VehicleState:
    return VehicleState(
        vehicle_id=d["id"], timestamp=d["t"], x=d["x"], y=d["y"], speed=d["v"],
        acceleration=d["a"], heading=d["h"], lane_id=d["lane"], length=d["len"], width=d["w"],
        connected=False, source=Source.CAMERA,
    )


def instance_to_json(inst: MergeInstance) -> dict:
    t = inst.triple
    return {
        "instance_id": inst.instance_id,
        "merging": t.merging, "preceding": t.preceding, "following": t.following,
        "target_lane": t.target_lane, "merge_point": list(t.merge_point),
        "merge_frame_index": t.merge_frame_index, "lane_axis": list(inst.lane_axis),
        "frames": [[state_to_json(s) for s in fr] for fr in inst.frames],
    }


def instance_from_json(doc: dict) -> MergeInstance:
    from ..geometry import MergeTriple

    triple = MergeTriple(
        merging=doc["merging"], preceding=doc["preceding"], following=doc["following"],
        target_lane=doc["target_lane"], merge_point=tuple(doc["merge_point"]),
        merge_frame_index=doc["merge_frame_index"],
    )
    frames = tuple(tuple(state_from_json(s) for s in fr) for fr in doc["frames"])
    return MergeInstance(triple, frames, tuple(doc["lane_axis"]))


def write_dataset(result: ExtractionResult, out_dir: str | Path, seed: int, params: SafetyParams) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = [inst.instance_id for inst in result.instances]
    train, test, val = split_instance_ids(ids, seed)
    where = {i: "train" for i in train} | {i: "test" for i in test} | {i: "validation" for i in val}
    handles = {name: open(out / f"{name}.jsonl", "w", encoding="utf-8", newline="\n") for name in SUBSETS}
    try:
        for s in result.samples:
            handles[where[s.instance_id]].write(_dumps(s.to_json()) + "\n")
    finally:
        for h in handles.values():
            h.close()
    with open(out / "instances.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for inst in result.instances:
            fh.write(_dumps({**instance_to_json(inst), "subset": where[inst.instance_id]}) + "\n")

    safe_frac = merge_frame_safe_fraction(result.instances, params)
    manifest = {
        "seed": seed,
        "instances": len(result.instances),
        "samples": len(result.samples),
        "skipped_rows": result.skipped_rows,
        "rejections": dict(sorted(Counter(r.reason.value for r in result.rejections).items())),
        "split": {"train": train, "test": test, "validation": val},
        "merge_frame_safe_fraction": safe_frac,
        "merge_frame_safe_flag": bool(safe_frac < MERGE_FRAME_SAFE_TARGET),
        "feasible_fraction": (
            sum(s.merge_feasible for s in result.samples) / len(result.samples) if result.samples else 0.0
        ),
        "safety": {"standstill_gap": params.standstill_gap, "time_headway": params.time_headway},
    }
    if manifest["merge_frame_safe_flag"]:
        log.warning("only %.1f%% of instances are safe at their merge frame", 100 * safe_frac)
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_samples(dataset_dir: str | Path, subset: str) -> list[LabeledSample]:
    path = Path(dataset_dir) / f"{subset}.jsonl"
    with open(path, encoding="utf-8") as fh:
        return [LabeledSample.from_json(json.loads(line)) for line in fh if line.strip()]


def load_instances(dataset_dir: str | Path, subset: str | None = None) -> list[MergeInstance]:
    out = []
    with open(Path(dataset_dir) / "instances.jsonl", encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            if subset is None or doc["subset"] == subset:
                out.append(instance_from_json(doc))
    return out


TASKS = ("merge", "accel", "heading")


def to_arrays(samples: list[LabeledSample], task: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature matrix, integer targets and instance groups for one prediction task."""
    X = np.array([s.features for s in samples], dtype=float).reshape(len(samples), -1)
    if task == "merge":
        y = np.array([int(s.merge_feasible) for s in samples], dtype=int)
    elif task == "accel":
        y = np.array([s.accel_class for s in samples], dtype=int)
    elif task == "heading":
        y = np.array([s.heading_class for s in samples], dtype=int)
    else:
        raise ValueError(f"unknown task {task!r}")
    groups = np.array([s.instance_id for s in samples])
    return X, y, groups
