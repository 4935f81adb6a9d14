"""Synthetic multi-lane highway traffic written in the 25-column NGSIM layout.

Vehicles follow IDM longitudinally and change lanes when an adjacent gap
clears an acceptance margin; lateral motion is a 3 s cosine profile and
``Lane_ID`` flips when the centre crosses the lane boundary. Output units
are feet, like the public exports, so the reader's unit mapping is exercised.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FT = 0.3048
NGSIM_COLUMNS = (
    "Vehicle_ID", "Frame_ID", "Total_Frames", "Global_Time", "Local_X", "Local_Y",
    "Global_X", "Global_Y", "v_Length", "v_Width", "v_Class", "v_Vel", "v_Acc",
    "Lane_ID", "O_Zone", "D_Zone", "Int_ID", "Section_ID", "Direction", "Movement",
    "Preceding", "Following", "Space_Headway", "Time_Headway", "Location",
)


@dataclass
class HighwayConfig:
    n_lanes: int = 4
    lane_width: float = 3.66
    road_length: float = 450.0
    duration_s: float = 600.0
    arrival_rate: float = 0.5  # vehicles / s / lane
    desired_speed: tuple[float, float] = (12.0, 22.0)
    change_rate: float = 0.08  # lane-change desires / s / vehicle
    change_duration_s: float = 3.0
    desire_timeout_s: float = 12.0
    epoch_ms: int = 1113433135300
    idm: dict = field(default_factory=lambda: {"a": 1.4, "b": 2.0, "T": 1.2, "s0": 2.0})


@dataclass
class _Car:
    vid: int
    s: float
    v: float
    v0: float
    length: float
    width: float
    lane: int  # lane the centre currently sits in
    lat: float  # metres from the left road edge
    acc: float = 0.0
    target: int | None = None
    desire_left: float = 0.0
    seek: int = 0  # -1 yields to target-lane traffic, +1 pushes ahead of it
    change_t: float = -1.0
    from_lat: float = 0.0
    to_lat: float = 0.0
    rows: list = field(default_factory=list)


def _centre(lane: int, width: float) -> float:
    return (lane - 0.5) * width


def _idm(car: _Car, leader: _Car | None, p: dict) -> float:
    free = 1.0 - (car.v / car.v0) ** 4
    if leader is None:
        return p["a"] * free
    gap = max(leader.s - car.s - (leader.length + car.length) / 2.0, 0.1)
    dv = car.v - leader.v
    s_star = p["s0"] + max(0.0, car.v * p["T"] + car.v * dv / (2.0 * math.sqrt(p["a"] * p["b"])))
    return p["a"] * (free - (s_star / gap) ** 2)


def _neighbours(cars: list[_Car], lane: int, s: float, exclude: _Car):
    ahead = behind = None
    for c in cars:
        if c is exclude or c.lane != lane:
            continue
        if c.s > s and (ahead is None or c.s < ahead.s):
            ahead = c
        elif c.s <= s and (behind is None or c.s > behind.s):
            behind = c
    return ahead, behind


def _gap_acceptable(car: _Car, ahead: _Car | None, behind: _Car | None) -> bool:
    margin = 2.5
    if ahead is not None:
        gap = ahead.s - car.s - (ahead.length + car.length) / 2.0
        if gap < 1.0 + 0.5 * car.v + margin + 2.0 * max(0.0, car.v - ahead.v):
            return False
    if behind is not None:
        gap = car.s - behind.s - (behind.length + car.length) / 2.0
        if gap < 1.0 + 0.5 * behind.v + margin + 2.0 * max(0.0, behind.v - car.v):
            return False
    return True


def simulate_highway(cfg: HighwayConfig, seed: int) -> list[list]:
    """Run the traffic model and return NGSIM-layout rows (feet, ms)."""
    rng = np.random.default_rng(seed)
    dt = 0.1
    cars: list[_Car] = []
    done: list[_Car] = []
    next_id = 1
    next_arrival = [rng.exponential(1.0 / cfg.arrival_rate) for _ in range(cfg.n_lanes)]
    n_ticks = int(round(cfg.duration_s / dt))
    for tick in range(n_ticks):
        t = tick * dt
        for lane_idx in range(cfg.n_lanes):
            if t < next_arrival[lane_idx]:
                continue
            lane = lane_idx + 1
            last = min((c for c in cars if c.lane == lane), key=lambda c: c.s, default=None)
            if last is not None and last.s < 25.0:
                next_arrival[lane_idx] = t + 0.5
                continue
            v0 = float(rng.uniform(*cfg.desired_speed))
            v = v0 if last is None else min(v0, last.v)
            length = float(rng.uniform(4.0, 5.5))
            cars.append(_Car(next_id, 0.0, v, v0, length, float(rng.uniform(1.7, 2.1)),
                             lane, _centre(lane, cfg.lane_width)))
            next_id += 1
            next_arrival[lane_idx] = t + rng.exponential(1.0 / cfg.arrival_rate)

        # record before integrating so every car has a row at its spawn frame
        for c in cars:
            c.rows.append((tick, c.s, c.lat, c.v, c.acc, c.lane))

        by_lane: dict[int, list[_Car]] = {}
        for c in cars:
            by_lane.setdefault(c.lane, []).append(c)
        for lane_cars in by_lane.values():
            lane_cars.sort(key=lambda c: c.s)
        accs = []
        for c in cars:
            lane_cars = by_lane[c.lane]
            i = lane_cars.index(c)
            leader = lane_cars[i + 1] if i + 1 < len(lane_cars) else None
            a = _idm(c, leader, cfg.idm)
            if c.target is not None and c.change_t < 0:
                ahead, behind = _neighbours(cars, c.target, c.s, c)
                if not _gap_acceptable(c, ahead, behind):
                    a = min(a, -1.2) if c.seek < 0 else min(a, 1.0) if a > 0 else a
                elif ahead is not None:
                    a = min(a, 0.5 * (ahead.v - c.v) + 0.3)
            accs.append(max(-6.0, min(a, 2.5)))

        for c, a in zip(cars, accs):
            c.acc = a
            ds = c.v * dt + 0.5 * a * dt * dt
            c.v = max(0.0, c.v + a * dt)
            c.s += max(ds, 0.0)
            if c.change_t >= 0:
                c.change_t += dt
                frac = min(c.change_t / cfg.change_duration_s, 1.0)
                c.lat = c.from_lat + (c.to_lat - c.from_lat) * (1 - math.cos(math.pi * frac)) / 2
                c.lane = int(c.lat // cfg.lane_width) + 1
                if frac >= 1.0:
                    c.change_t = -1.0
                    c.target = None
            elif c.target is not None:
                c.desire_left -= dt
                ahead, behind = _neighbours(cars, c.target, c.s, c)
                if c.desire_left <= 0:
                    c.target = None
                elif _gap_acceptable(c, ahead, behind):
                    c.change_t = 0.0
                    c.from_lat = c.lat
                    c.to_lat = _centre(c.target, cfg.lane_width)
            elif c.s > 60.0 and rng.random() < cfg.change_rate * dt:
                options = [l for l in (c.lane - 1, c.lane + 1) if 1 <= l <= cfg.n_lanes]
                c.target = int(options[rng.integers(len(options))])
                c.desire_left = cfg.desire_timeout_s
                c.seek = -1 if rng.random() < 0.6 else 1

        still = []
        for c in cars:
            (done if c.s > cfg.road_length else still).append(c)
        cars = still
    done.extend(cars)

    rows = []
    for c in sorted(done, key=lambda c: c.vid):
        total = len(c.rows)
        for tick, s, lat, v, a, lane in c.rows:
            frame = tick + 1
            rows.append([
                c.vid, frame, total, cfg.epoch_ms + tick * 100,
                round(lat / FT, 3), round(s / FT, 3),
                round((lat + 6042000 * FT) / FT, 3), round((s + 2133000 * FT) / FT, 3),
                round(c.length / FT, 2), round(c.width / FT, 2), 2,
                round(v / FT, 3), round(a / FT, 3), lane,
                101, 201, 0, 0, 2, 1, 0, 0, 0.0, 0.0, "synthetic-i80",
            ])
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


def write_ngsim_csv(path: str | Path, rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NGSIM_COLUMNS)
        w.writerows(rows)


def generate_trajectories(path: str | Path, seed: int = 0, cfg: HighwayConfig | None = None) -> int:
    rows = simulate_highway(cfg or HighwayConfig(), seed)
    write_ngsim_csv(path, rows)
    return len(rows)
