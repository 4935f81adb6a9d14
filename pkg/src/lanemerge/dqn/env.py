"""Merge environment in a lane-aligned frame.

Stations ``s`` run along the target lane and lateral offsets ``e`` are measured
from its centreline, positive to the left. The on-ramp lies at ``e = -lane_width``.
Heading error ``delta`` is the vehicle heading minus the lane heading in degrees,
clockwise positive, so a negative ``delta`` steers left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..geometry import SafetyParams

DT = 0.1
ACCELERATIONS = (-3.0, -1.5, 0.0, 1.5, 3.0)
HEADING_DELTAS = (-4.0, 0.0, 4.0)
N_ACTIONS = len(ACCELERATIONS) * len(HEADING_DELTAS)
STATE_DIM = 8
MAX_HEADING_ERROR = 30.0
MAX_SPEED = 40.0
FOLLOWER_SLOWDOWN = -0.5
MIN_RAMP_SPEED = 2.0


class EnvExhausted(StopIteration):
    """No episodes left to serve."""


class DegenerateEpisode(ValueError):
    """Initial distance to the slot is zero."""


def decode_action(index: int) -> tuple[float, float]:
    """Action index to (acceleration m/s^2, heading delta deg)."""
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} outside [0, {N_ACTIONS - 1}]")
    return ACCELERATIONS[index // len(HEADING_DELTAS)], HEADING_DELTAS[index % len(HEADING_DELTAS)]


def encode_action(accel: float, heading_delta: float) -> int:
    return ACCELERATIONS.index(accel) * len(HEADING_DELTAS) + HEADING_DELTAS.index(heading_delta)


@dataclass(frozen=True)
class LaneVehicle:
    s: float
    e: float
    v: float
    a: float = 0.0
    delta: float = 0.0
    length: float = 4.5
    width: float = 1.8

    @property
    def front(self) -> float:
        return self.s + self.length / 2

    @property
    def rear(self) -> float:
        return self.s - self.length / 2


def advance(veh: LaneVehicle, accel: float, delta: float | None = None, dt: float = DT) -> LaneVehicle:
    """One tick of point-mass kinematics along the vehicle's heading; speed never goes negative."""
    delta = veh.delta if delta is None else max(-MAX_HEADING_ERROR, min(MAX_HEADING_ERROR, delta))
    v0 = veh.v
    v1 = v0 + accel * dt
    if v1 < 0.0:
        dist = v0 * v0 / (2.0 * -accel) if accel < 0 else 0.0
        v1 = 0.0
    else:
        if v1 > MAX_SPEED:
            v1 = MAX_SPEED
        dist = 0.5 * (v0 + v1) * dt
    rad = math.radians(delta)
    return replace(veh, s=veh.s + dist * math.cos(rad), e=veh.e - dist * math.sin(rad), v=v1, a=accel, delta=delta)


def slot_midpoint(p: LaneVehicle, f: LaneVehicle) -> float:
    """Station halfway between P's rear bumper and F's front bumper."""
    return 0.5 * (p.rear + f.front)


def slot_distance(m: LaneVehicle, p: LaneVehicle, f: LaneVehicle) -> float:
    """Distance along the target centreline between M's projection and the slot midpoint.

    The lateral offset is left out on purpose: a ramp vehicle level with the
    midpoint is one lane width away, so a planar distance would cap the
    reward well below 1 until the lane change is under way.
    """
    return abs(m.s - slot_midpoint(p, f))


def lane_safe_slot(m: LaneVehicle, p: LaneVehicle, f: LaneVehicle, params: SafetyParams) -> bool:
    """Longitudinal slot test in the lane frame; same inequalities as the plane version."""
    if not f.s < m.s < p.s:
        return False
    return p.rear - m.front >= params.required_gap(m.v) and m.rear - f.front >= params.required_gap(f.v)


def slot_too_small(m: LaneVehicle, p: LaneVehicle, f: LaneVehicle, params: SafetyParams) -> bool:
    room = p.rear - f.front
    return room < m.length + params.required_gap(m.v) + params.required_gap(f.v)


def reward_positive(d: float, d0: float, outcome: str | None = None) -> float:
    """Linear closeness to the slot midpoint, with terminal overrides."""
    if d0 <= 0:
        raise DegenerateEpisode("d0 must be positive")
    if outcome == "success":
        return 1.0
    if outcome is not None and outcome.startswith("violation"):
        return 0.0
    return min(1.0, max(0.0, 1.0 - d / d0))


def reward_negative(d: float, d0: float, outcome: str | None = None) -> float:
    return reward_positive(d, d0, outcome) - 1.0


def shift_reward(r_pos: float, variant: str) -> float:
    if variant == "positive":
        return r_pos
    if variant == "negative":
        return r_pos - 1.0
    raise ValueError(f"unknown reward variant {variant!r}")


def _clip1(x: float) -> float:
    return -1.0 if x < -1.0 else 1.0 if x > 1.0 else x


def encode_state(m: LaneVehicle, p: LaneVehicle, f: LaneVehicle, merge_station: float) -> np.ndarray:
    return np.array(
        [
            _clip1((p.s - m.s) / 50.0),
            _clip1((m.v - p.v) / 15.0),
            _clip1((m.s - f.s) / 50.0),
            _clip1((f.v - m.v) / 15.0),
            _clip1((merge_station - m.s) / 100.0),
            _clip1(m.v / 30.0),
            _clip1(m.e / 4.0),
            _clip1(m.delta / 30.0),
        ]
    )


@dataclass(frozen=True)
class MergeEpisode:
    """Initial conditions plus optional recorded P/F motion (one entry per tick)."""

    m: LaneVehicle
    p: LaneVehicle
    f: LaneVehicle
    merge_station: float
    deadline_station: float
    lane_width: float = 3.66
    max_steps: int = 300
    p_track: tuple[LaneVehicle, ...] | None = None
    f_track: tuple[LaneVehicle, ...] | None = None
    episode_id: str = ""
    taper_length: float = 60.0

    def ramp_edge(self, s: float) -> float:
        """Right road edge; over the taper it closes in to the target lane boundary."""
        outer = -1.5 * self.lane_width
        if self.taper_length <= 0:
            return outer
        frac = (s - (self.deadline_station - self.taper_length)) / self.taper_length
        frac = 0.0 if frac < 0.0 else 1.0 if frac > 1.0 else frac
        return outer + frac * self.lane_width


def check_outcome(
    m: LaneVehicle, p: LaneVehicle, f: LaneVehicle, ep: MergeEpisode, params: SafetyParams
) -> str | None:
    """``success``, a ``violation:<reason>`` string, or None while the episode runs."""
    half = ep.lane_width / 2
    if m.e > half or m.e < ep.ramp_edge(m.s):
        return "violation:off_road"
    # any part of M's body inside the target lane must sit cleanly inside the slot
    if m.e + m.width / 2 > -half:
        if not f.s < m.s < p.s or p.rear - m.front < params.standstill_gap or m.rear - f.front < params.standstill_gap:
            return "violation:conflict"
    # merge completes when M's centre crosses into the target lane, as a lane-id switch does
    if abs(m.e) <= half and lane_safe_slot(m, p, f, params):
        return "success"
    if m.s > ep.deadline_station:
        return "violation:ramp_end"
    if m.v < MIN_RAMP_SPEED and m.e < -half:
        return "violation:stall"
    return None


@dataclass(frozen=True)
class StepResult:
    state: np.ndarray
    reward: float
    terminal: bool
    truncated: bool
    outcome: str | None
    distance: float


class ScenarioRunner:
    """Single-episode dynamics shared by training and rollout."""

    def __init__(self, ep: MergeEpisode, params: SafetyParams = SafetyParams(), follower_slowdown: bool = True):
        self.ep = ep
        self.params = params
        self.follower_slowdown = follower_slowdown
        self.m, self.p, self.f = ep.m, ep.p, ep.f
        self.t = 0
        self.d0 = slot_distance(self.m, self.p, self.f)
        if self.d0 <= 0:
            raise DegenerateEpisode(f"episode {ep.episode_id!r} starts at the slot midpoint")
        self.follower_accels: list[float] = []
        self.history: list[tuple[LaneVehicle, LaneVehicle, LaneVehicle]] = []
        self.outcome = check_outcome(self.m, self.p, self.f, ep, params)

    def state(self) -> np.ndarray:
        return encode_state(self.m, self.p, self.f, self.ep.merge_station)

    def step(self, action: int) -> StepResult:
        accel, dh = decode_action(action)
        ep = self.ep
        self.m = advance(self.m, accel, self.m.delta + dh)
        if ep.p_track is not None:
            k = min(self.t + 1, len(ep.p_track) - 1)
            self.p, self.f = ep.p_track[k], ep.f_track[k]
            self.follower_accels.append(self.f.a)
        else:
            fa = FOLLOWER_SLOWDOWN if self.follower_slowdown and slot_too_small(self.m, self.p, self.f, self.params) else 0.0
            self.p = advance(self.p, 0.0)
            self.f = advance(self.f, fa)
            self.follower_accels.append(fa)
        self.t += 1
        self.history.append((self.m, self.p, self.f))
        self.outcome = check_outcome(self.m, self.p, self.f, ep, self.params)
        d = slot_distance(self.m, self.p, self.f)
        reward = reward_positive(d, self.d0, self.outcome)
        truncated = self.outcome is None and (
            self.t >= ep.max_steps or (ep.p_track is not None and self.t >= len(ep.p_track) - 1)
        )
        return StepResult(self.state(), reward, self.outcome is not None, truncated, self.outcome, d)


class MergeEnv:
    """Serves episodes in order; raises :class:`EnvExhausted` once they run out unless cycling."""

    def __init__(
        self,
        episodes: Sequence[MergeEpisode],
        params: SafetyParams = SafetyParams(),
        cycle: bool = True,
        follower_slowdown: bool = True,
    ):
        if not episodes:
            raise ValueError("environment needs at least one episode")
        self.episodes = list(episodes)
        self.params = params
        self.cycle = cycle
        self.follower_slowdown = follower_slowdown
        self._next = 0
        self.runner: ScenarioRunner | None = None

    def reset(self) -> np.ndarray:
        while True:
            if self._next >= len(self.episodes):
                if not self.cycle:
                    raise EnvExhausted("no episodes left")
                self._next = 0
            ep = self.episodes[self._next]
            self._next += 1
            try:
                self.runner = ScenarioRunner(ep, self.params, self.follower_slowdown)
            except DegenerateEpisode:
                continue
            return self.runner.state()

    def step(self, action: int) -> StepResult:
        if self.runner is None:
            raise RuntimeError("reset() before step()")
        return self.runner.step(action)


def reference_action(runner: "ScenarioRunner") -> int:
    """Hand-tuned controller: track the slot midpoint, steer in once the slot is usable.

    Used to vet synthetic scenarios and as a baseline for the learned policy.
    """
    m, p, f = runner.m, runner.p, runner.f
    mid = slot_midpoint(p, f)
    want = 1.0 * (mid - m.s) + 1.5 * (p.v - m.v)
    accel = min(ACCELERATIONS, key=lambda x: abs(x - want))
    usable = lane_safe_slot(m, p, f, runner.params) or (
        abs(mid - m.s) < 2.0 and not slot_too_small(m, p, f, runner.params)
    )
    e_target = 0.0 if usable else -runner.ep.lane_width
    want_delta = max(-25.0, min(25.0, -8.0 * (e_target - m.e)))
    dh = min(HEADING_DELTAS, key=lambda x: abs(m.delta + x - want_delta))
    return encode_action(accel, dh)


def run_policy(ep: MergeEpisode, policy, params: SafetyParams = SafetyParams()) -> tuple[str, "ScenarioRunner"]:
    """Roll ``policy(runner) -> action`` to the end of the episode."""
    runner = ScenarioRunner(ep, params)
    outcome = runner.outcome
    while outcome is None:
        res = runner.step(policy(runner))
        outcome = "timeout" if res.truncated else res.outcome
    return outcome, runner


@dataclass(frozen=True)
class SyntheticConfig:
    """Scenario sampler settings.

    Scenarios that :func:`reference_action` cannot finish are redrawn, so every
    served episode is known to be solvable.
    """

    gap_range: tuple[float, float] = (8.0, 40.0)
    speed_range: tuple[float, float] = (5.0, 15.0)
    m_offset_range: tuple[float, float] = (-30.0, 10.0)
    merge_distance_range: tuple[float, float] = (100.0, 180.0)
    taper_length: float = 60.0
    lane_width: float = 3.66
    vehicle_length: float = 4.5
    max_steps: int = 400
    max_draws: int = 100


def sample_synthetic_episode(rng: np.random.Generator, cfg: SyntheticConfig = SyntheticConfig(), episode_id: str = "") -> MergeEpisode:
    L = cfg.vehicle_length
    for _ in range(cfg.max_draws):
        gap = rng.uniform(*cfg.gap_range)
        v_traffic = rng.uniform(*cfg.speed_range)
        v_m = rng.uniform(*cfg.speed_range)
        offset = rng.uniform(*cfg.m_offset_range)
        merge_distance = rng.uniform(*cfg.merge_distance_range)
        f = LaneVehicle(s=0.0, e=0.0, v=v_traffic, length=L)
        p = LaneVehicle(s=f.front + gap + L / 2, e=0.0, v=v_traffic, length=L)
        m = LaneVehicle(s=slot_midpoint(p, f) + offset, e=-cfg.lane_width, v=v_m, length=L)
        ep = MergeEpisode(
            m, p, f,
            merge_station=m.s + merge_distance,
            deadline_station=m.s + merge_distance,
            lane_width=cfg.lane_width,
            max_steps=cfg.max_steps,
            episode_id=episode_id,
            taper_length=cfg.taper_length,
        )
        if run_policy(ep, reference_action)[0] == "success":
            return ep
    raise RuntimeError(f"no feasible scenario after {cfg.max_draws} draws")


def synthetic_episodes(n: int, seed: int, cfg: SyntheticConfig = SyntheticConfig()) -> list[MergeEpisode]:
    rng = np.random.default_rng(seed)
    return [sample_synthetic_episode(rng, cfg, f"synthetic-{seed}-{i}") for i in range(n)]


def split_episodes(episodes: Sequence[MergeEpisode], seed: int) -> dict[str, list[MergeEpisode]]:
    """Instance-level 70/20/10 split keyed by episode id."""
    from ..dataset.split import split_instance_ids

    by_id = {ep.episode_id: ep for ep in episodes}
    if len(by_id) != len(episodes):
        raise ValueError("episode ids must be unique")
    train, test, val = split_instance_ids(list(by_id), seed)
    return {
        "train": [by_id[i] for i in train],
        "test": [by_id[i] for i in test],
        "validation": [by_id[i] for i in val],
    }


def episodes_from_instances(instances: Iterable, lane_width: float = 3.66) -> Iterator[MergeEpisode]:
    """Turn extracted merge windows into replay episodes.

    P and F follow their recorded motion; M starts from its first recorded
    state. Windows where M approaches from the left are mirrored so the ramp
    is always on the right.
    """
    for inst in instances:
        ax, ay = inst.lane_axis
        lx, ly = -ay, ax

        def station(st):
            return st.x * ax + st.y * ay

        def lateral(st):
            return st.x * lx + st.y * ly

        frames = inst.frames
        centre = [0.5 * (lateral(p) + lateral(f)) for _, p, f in frames]
        lane_heading = math.degrees(math.atan2(ax, ay))
        side = -1.0 if lateral(frames[0][0]) - centre[0] < 0 else 1.0

        def to_lane(st, k):
            delta = ((st.heading - lane_heading + 180.0) % 360.0) - 180.0
            # mirroring flips left/right, so the heading error flips too
            return LaneVehicle(
                s=station(st), e=-side * (lateral(st) - centre[k]), v=st.speed, a=st.acceleration,
                delta=delta if side < 0 else -delta, length=st.length, width=st.width,
            )

        ms = [to_lane(m, k) for k, (m, _, _) in enumerate(frames)]
        ps = tuple(to_lane(p, k) for k, (_, p, _) in enumerate(frames))
        fs = tuple(to_lane(f, k) for k, (_, _, f) in enumerate(frames))
        merge = inst.triple.merge_point
        yield MergeEpisode(
            m=ms[0], p=ps[0], f=fs[0],
            merge_station=merge[0] * ax + merge[1] * ay,
            deadline_station=ms[-1].s,
            lane_width=lane_width,
            max_steps=len(frames) - 1,
            p_track=ps, f_track=fs,
            episode_id=inst.instance_id,
        )
