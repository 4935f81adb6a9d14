"""Roadside camera emulation and camera/on-board report fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Source, VehicleState
from .scenario import CameraSpec, polygon_contains


@dataclass(frozen=True)
class CameraReport:
    track_id: str
    state: VehicleState


class Camera:
    """Sees every vehicle inside its coverage polygon with Gaussian position noise.

    The tracker keeps one id per physical vehicle, which is all the fusion
    stage needs for continuity.
    """

    def __init__(self, spec: CameraSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self._tracks: dict[str, str] = {}

    def observe(self, truth: list[VehicleState]) -> list[CameraReport]:
        out = []
        for st in sorted(truth, key=lambda s: s.vehicle_id):
            noise = self.rng.normal(0.0, self.spec.sigma_m, 2) if self.spec.sigma_m > 0 else (0.0, 0.0)
            if not polygon_contains(self.spec.polygon, st.x, st.y):
                continue
            tid = self._tracks.setdefault(st.vehicle_id, f"cam-{len(self._tracks) + 1}")
            ts = max(0, int(round(st.timestamp + self.spec.clock_offset_ms)))
            out.append(
                CameraReport(
                    tid,
                    st.evolve(
                        vehicle_id=tid, timestamp=ts, x=st.x + float(noise[0]), y=st.y + float(noise[1]),
                        connected=False, source=Source.CAMERA, lat=None, lon=None,
                    ),
                )
            )
        return out


@dataclass(frozen=True)
class FusionResult:
    states: list[VehicleState]
    pairs: list[tuple[str, str]]  # (vehicle id, camera track id)
    ambiguous: list[str]


class Fusion:
    """Greedy nearest-pair association of camera tracks with on-board reports.

    A pair qualifies when the positions lie within ``gate_m`` and the
    timestamps within ``gate_ms``; pairs are taken closest first. Camera tracks
    left over become ``unconnected-<n>`` vehicles with stable ids.
    """

    def __init__(self, gate_m: float = 2.0, gate_ms: float = 100.0):
        self.gate_m = gate_m
        self.gate_ms = gate_ms
        self._synthetic: dict[str, str] = {}

    def synthetic_id(self, track_id: str) -> str:
        if track_id not in self._synthetic:
            self._synthetic[track_id] = f"unconnected-{len(self._synthetic) + 1}"
        return self._synthetic[track_id]

    def fuse(self, onboard: list[VehicleState], camera: list[CameraReport]) -> FusionResult:
        candidates = []
        per_cam: dict[str, int] = {}
        per_obu: dict[str, int] = {}
        for ob in onboard:
            for cr in camera:
                if abs(ob.timestamp - cr.state.timestamp) >= self.gate_ms:
                    continue
                d = math.hypot(ob.x - cr.state.x, ob.y - cr.state.y)
                if d < self.gate_m:
                    candidates.append((d, ob.vehicle_id, cr.track_id))
                    per_cam[cr.track_id] = per_cam.get(cr.track_id, 0) + 1
                    per_obu[ob.vehicle_id] = per_obu.get(ob.vehicle_id, 0) + 1
        ambiguous = sorted({k for k, n in per_cam.items() if n > 1} | {k for k, n in per_obu.items() if n > 1})
        candidates.sort()
        used_obu: set[str] = set()
        used_cam: set[str] = set()
        pairs = []
        for _, vid, tid in candidates:
            if vid in used_obu or tid in used_cam:
                continue
            used_obu.add(vid)
            used_cam.add(tid)
            pairs.append((vid, tid))
        states = [ob.evolve(source=Source.FUSED) if ob.vehicle_id in used_obu else ob for ob in onboard]
        for cr in camera:
            if cr.track_id not in used_cam:
                states.append(cr.state.evolve(vehicle_id=self.synthetic_id(cr.track_id)))
        states.sort(key=lambda s: s.vehicle_id)
        return FusionResult(states, sorted(pairs), ambiguous)
