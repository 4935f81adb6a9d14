"""Reader for NGSIM-style trajectory CSVs.

Column names and unit scaling come from a mapping config so other
25-column trajectory exports can be read with the same code path.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from ..geometry import ValidationError, VehicleState, vector_heading

log = logging.getLogger(__name__)

FRAME_PERIOD_MS = 100

REQUIRED = ("vehicle_id", "frame", "x", "y", "speed", "lane_id")
OPTIONAL = ("timestamp", "acceleration", "length", "width", "heading")


class FormatError(ValueError):
    """The CSV header does not carry a column the mapping requires."""


@dataclass(frozen=True)
class TrajectoryFrame(VehicleState):
    frame_index: int = 0


@dataclass
class ColumnMapping:
    """Maps logical fields to CSV column names plus unit conversion.

    ``length_scale`` multiplies positions, speeds, accelerations and sizes
    (0.3048 for the feet-based NGSIM exports). Timestamps come from the
    frame index unless ``timestamp_source`` is ``"column"``.
    """

    columns: dict[str, str | None] = field(
        default_factory=lambda: {
            "vehicle_id": "Vehicle_ID",
            "frame": "Frame_ID",
            "timestamp": "Global_Time",
            "x": "Local_X",
            "y": "Local_Y",
            "speed": "v_Vel",
            "acceleration": "v_Acc",
            "length": "v_Length",
            "width": "v_Width",
            "lane_id": "Lane_ID",
            "heading": None,
        }
    )
    length_scale: float = 0.3048
    timestamp_source: str = "frame"
    lane_axis: tuple[float, float] = (0.0, 1.0)

    @classmethod
    def load(cls, path: str | Path) -> "ColumnMapping":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        base = cls()
        columns = dict(base.columns)
        columns.update(doc.get("columns", {}))
        return cls(
            columns=columns,
            length_scale=float(doc.get("length_scale", base.length_scale)),
            timestamp_source=doc.get("timestamp_source", base.timestamp_source),
            lane_axis=tuple(doc.get("lane_axis", base.lane_axis)),
        )

    def to_json(self) -> dict:
        return {
            "columns": self.columns,
            "length_scale": self.length_scale,
            "timestamp_source": self.timestamp_source,
            "lane_axis": list(self.lane_axis),
        }


@dataclass
class ParseResult:
    frames: list[TrajectoryFrame]
    skipped: int

    def __iter__(self):
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)


def natural_key(vehicle_id: str):
    """Numeric ids sort numerically, everything else lexically after them."""
    return (0, int(vehicle_id), "") if re.fullmatch(r"\d+", vehicle_id) else (1, 0, vehicle_id)


def parse_trajectory_csv(path: str | Path, mapping: ColumnMapping | None = None) -> ParseResult:
    mapping = mapping or ColumnMapping()
    cols = mapping.columns
    scale = mapping.length_scale
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: missing header row") from None
        pos = {name: i for i, name in enumerate(header)}
        missing = [cols.get(k) or k for k in REQUIRED if cols.get(k) not in pos]
        if mapping.timestamp_source == "column" and cols.get("timestamp") not in pos:
            missing.append(cols.get("timestamp") or "timestamp")
        if missing:
            raise FormatError(f"{path}: missing required column(s) {missing}")
        idx = {k: pos[cols[k]] for k in REQUIRED + OPTIONAL if cols.get(k) in pos}

        rows: dict[tuple[str, int], dict] = {}
        skipped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rec = _read_row(row, idx, scale, mapping.timestamp_source)
            except (ValueError, IndexError) as exc:
                skipped += 1
                log.debug("%s:%d skipped: %s", path, lineno, exc)
                continue
            key = (rec["vehicle_id"], rec["timestamp"])
            if key in rows:
                skipped += 1
                log.debug("%s:%d skipped: duplicate %s", path, lineno, key)
                continue
            rows[key] = rec

    by_vehicle: dict[str, list[dict]] = defaultdict(list)
    for rec in rows.values():
        by_vehicle[rec["vehicle_id"]].append(rec)

    frames: list[TrajectoryFrame] = []
    for vid in sorted(by_vehicle, key=natural_key):
        track = sorted(by_vehicle[vid], key=lambda r: r["timestamp"])
        if "heading" not in idx:
            _derive_headings(track)
        for rec in track:
            try:
                frames.append(TrajectoryFrame(**rec))
            except ValidationError as exc:
                skipped += 1
                log.debug("skipped %s@%s: %s", vid, rec["timestamp"], exc)
    if skipped:
        log.info("%s: %d malformed row(s) skipped", path, skipped)
    return ParseResult(frames, skipped)


def _read_row(row: list[str], idx: dict[str, int], scale: float, ts_source: str) -> dict:
    def num(key: str, default: float | None = None) -> float:
        if key not in idx:
            if default is None:
                raise ValueError(f"no {key}")
            return default
        v = float(row[idx[key]])
        if not math.isfinite(v):
            raise ValueError(f"non-finite {key}")
        return v

    vid = row[idx["vehicle_id"]].strip()
    if not vid:
        raise ValueError("empty vehicle id")
    frame = int(float(row[idx["frame"]]))
    if frame < 0:
        raise ValueError("negative frame")
    if ts_source == "column":
        timestamp = int(num("timestamp"))
    else:
        timestamp = frame * FRAME_PERIOD_MS
    speed = num("speed") * scale
    if speed < 0:
        raise ValueError("negative speed")
    return {
        "vehicle_id": vid,
        "timestamp": timestamp,
        "frame_index": frame,
        "x": num("x") * scale,
        "y": num("y") * scale,
        "speed": speed,
        "acceleration": num("acceleration", 0.0) * scale,
        "heading": num("heading", 0.0) % 360.0,
        "lane_id": int(float(row[idx["lane_id"]])),
        "length": num("length", 4.0 / scale) * scale,
        "width": num("width", 1.8 / scale) * scale,
        "connected": False,
    }


def _derive_headings(track: list[dict]) -> None:
    """Heading from the central difference of positions; stationary samples keep the previous one."""
    prev = 0.0
    n = len(track)
    for i, rec in enumerate(track):
        a = track[max(i - 1, 0)]
        b = track[min(i + 1, n - 1)]
        dx, dy = b["x"] - a["x"], b["y"] - a["y"]
        if math.hypot(dx, dy) > 1e-6:
            prev = vector_heading(dx, dy)
        rec["heading"] = prev


def group_by_vehicle(frames) -> dict[str, list[TrajectoryFrame]]:
    out: dict[str, list[TrajectoryFrame]] = defaultdict(list)
    for f in frames:
        out[f.vehicle_id].append(f)
    for track in out.values():
        track.sort(key=lambda f: f.timestamp)
    return dict(out)
