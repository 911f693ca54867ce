"""Planner contract: the observation snapshot planners consume, the timed
trajectory they emit, and the fallback wrapper that guarantees an output.

Trajectories span 8 s at 0.1 s internal spacing. All rule-based planners
are pure functions of the observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from ..agents import SWEPT_BAND_HALF_WIDTH, VEHICLE_LENGTH
from ..geometry import FrenetPoint, LaneGraph, OrientedBox, Route, wrap_angle
from ..scenarios import ObstacleSpec

HORIZON = 8.0          # s
STEP = 0.1             # s
N_SAMPLES = int(round(HORIZON / STEP)) + 1
MAX_CURVATURE = 0.5    # 1/m, kinematic reachability bound between samples
FALLBACK_DECEL = 6.0   # m/s^2 used by the full-brake fallback


@dataclass(frozen=True)
class AgentObs:
    box: OrientedBox
    speed: float
    lane: str


@dataclass(frozen=True)
class PedestrianObs:
    position: tuple[float, float]
    velocity: tuple[float, float]
    crossing: bool


@dataclass(frozen=True)
class Observation:
    """Noise-free snapshot of one simulation tick (read-only)."""
    ego_box: OrientedBox
    ego_speed: float
    ego_accel: float
    agents: tuple[AgentObs, ...]
    pedestrians: tuple[PedestrianObs, ...]
    obstacles: tuple[ObstacleSpec, ...]
    graph: LaneGraph
    route: Route
    time: float
    # derived caches, functions of the fields above
    ego_lane: str = ""
    lane_blockers: dict = field(default_factory=dict)


BEHAVIOR_LABELS = ("follow_lane", "merge_left", "merge_right",
                   "overtake_obstacle", "stop_and_wait")


@dataclass(frozen=True)
class BehaviorOption:
    """A discrete maneuver conditioning the sampling motion planner: a
    reference centerline plus an offset from it."""
    label: str
    centerline: str          # lane id
    lateral_offset: float    # m, left positive
    target_speed_cap: float  # m/s, 0 for stop_and_wait
    obstacle_far_s: Optional[float] = None  # far end of the blocking obstacle

    def __post_init__(self):
        if self.label not in BEHAVIOR_LABELS:
            raise ValueError(f"unknown behavior label {self.label!r}")
        if self.label == "overtake_obstacle" and self.lateral_offset == 0.0:
            raise ValueError("overtake_obstacle needs a nonzero offset")
        if self.label == "stop_and_wait" and self.target_speed_cap != 0.0:
            raise ValueError("stop_and_wait must cap the target speed at 0")


class Trajectory:
    """Timed pose/speed sequence; t strictly increasing from 0, finite
    non-negative speeds, consecutive poses within the curvature bound."""

    def __init__(self, t: Sequence[float], x: Sequence[float], y: Sequence[float],
                 heading: Sequence[float], speed: Sequence[float]):
        self.t = np.asarray(t, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.heading = np.asarray(heading, dtype=float)
        self.speed = np.asarray(speed, dtype=float)
        n = len(self.t)
        if n < 2:
            raise ValueError("trajectory needs at least 2 samples")
        if any(len(a) != n for a in (self.x, self.y, self.heading, self.speed)):
            raise ValueError("trajectory arrays must share one length")
        if self.t[0] != 0.0 or np.any(np.diff(self.t) <= 0):
            raise ValueError("t must strictly increase from 0")
        if not np.all(np.isfinite(self.speed)) or np.any(self.speed < -1e-9):
            raise ValueError("speeds must be finite and >= 0")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("positions must be finite")
        ds = np.hypot(np.diff(self.x), np.diff(self.y))
        dh = np.abs(np.array([wrap_angle(d) for d in np.diff(self.heading)]))
        moving = ds > 1e-6
        if np.any(dh[moving] / ds[moving] > MAX_CURVATURE + 1e-6):
            worst = float(np.max(dh[moving] / ds[moving]))
            raise ValueError(f"curvature {worst:.3f} exceeds {MAX_CURVATURE} 1/m")

    def sample_at(self, t: float) -> tuple[float, float, float, float]:
        """Linear interpolation of (x, y, heading, speed) at time t (clamped)."""
        t = min(max(t, 0.0), float(self.t[-1]))
        i = int(np.searchsorted(self.t, t, side="right")) - 1
        i = min(max(i, 0), len(self.t) - 2)
        w = (t - self.t[i]) / (self.t[i + 1] - self.t[i])
        h0, h1 = self.heading[i], self.heading[i + 1]
        h = h0 + w * wrap_angle(h1 - h0)
        return (
            float(self.x[i] + w * (self.x[i + 1] - self.x[i])),
            float(self.y[i] + w * (self.y[i + 1] - self.y[i])),
            wrap_angle(float(h)),
            float(self.speed[i] + w * (self.speed[i + 1] - self.speed[i])),
        )

    def equals(self, other: "Trajectory") -> bool:
        return (np.array_equal(self.t, other.t) and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.heading, other.heading)
                and np.array_equal(self.speed, other.speed))


class Planner(Protocol):
    name: str

    def plan(self, obs: Observation) -> Trajectory: ...


def fallback_brake_trajectory(obs: Observation) -> Trajectory:
    """Full-brake trajectory along the current lane direction from the ego
    pose; emitted whenever a planner fails to produce a valid output."""
    line = obs.graph.lane(obs.ego_lane).centerline
    f = line.project((obs.ego_box.center.x, obs.ego_box.center.y))
    h = line.tangent_at(f.s)
    v0 = obs.ego_speed
    t = np.arange(N_SAMPLES) * STEP
    speed = np.maximum(0.0, v0 - FALLBACK_DECEL * t)
    dist = np.concatenate(([0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * STEP)))
    x = obs.ego_box.center.x + dist * math.cos(h)
    y = obs.ego_box.center.y + dist * math.sin(h)
    return Trajectory(t, x, y, np.full_like(t, h), speed)


def plan_with_fallback(planner: Planner, obs: Observation) -> Trajectory:
    """The simulator-facing contract: planner-internal failures map to the
    brake fallback, never to a missing trajectory."""
    try:
        return planner.plan(obs)
    except Exception:
        return fallback_brake_trajectory(obs)


# ---------------------------------------------------------------------------
# shared queries


def ego_frenet(obs: Observation, lane_id: str) -> FrenetPoint:
    line = obs.graph.lane(lane_id).centerline
    return line.project_extended((obs.ego_box.center.x, obs.ego_box.center.y))


def current_route_lane(obs: Observation) -> str:
    """The route lane laterally closest to the ego."""
    best = None
    for lane_id in obs.route.lane_sequence:
        f = ego_frenet(obs, lane_id)
        key = (abs(f.d), lane_id)
        if best is None or key < best[0]:
            best = (key, lane_id)
    return best[1]


def route_index(obs: Observation, lane_id: str) -> Optional[int]:
    try:
        return obs.route.lane_sequence.index(lane_id)
    except ValueError:
        return None


def agent_frenet_on(obs: Observation, agent: AgentObs, lane_id: str) -> FrenetPoint:
    line = obs.graph.lane(lane_id).centerline
    return line.project_extended((agent.box.center.x, agent.box.center.y))


def nearest_lead(obs: Observation, lane_id: str, from_s: float,
                 path_offset: Callable[[float], float] = lambda s: 0.0,
                 half_band: float = SWEPT_BAND_HALF_WIDTH,
                 ) -> Optional[tuple[float, float]]:
    """Nearest conflicting entity ahead of arc position from_s on a lane, as
    (s of its near edge, its speed along the lane).

    path_offset gives the planned lateral offset at a given s; entities are
    conflicting when they laterally overlap the swept band around that
    offset. Covers agents, static blocking obstacles and crossing or armed
    pedestrians inside the band.
    """
    lane = obs.graph.lane(lane_id)
    line = lane.centerline
    best: Optional[tuple[float, float]] = None

    def consider(s_near: float, speed: float):
        nonlocal best
        if s_near > from_s and (best is None or s_near < best[0]):
            best = (s_near, speed)

    for agent in obs.agents:
        f = agent_frenet_on(obs, agent, lane_id)
        lat = abs(f.d - path_offset(f.s))
        rel = wrap_angle(agent.box.center.heading - line.tangent_at(min(max(f.s, 0.0), line.length)))
        half_len = (abs(math.cos(rel)) * agent.box.length
                    + abs(math.sin(rel)) * agent.box.width) / 2.0
        if lat <= half_band + agent.box.width / 2.0 - 0.15:
            speed_along = agent.speed * math.cos(rel)
            consider(f.s - half_len, speed_along)

    for o in obs.obstacles:
        corners = o.box.corners()
        fs = [line.project_extended(c) for c in corners]
        d_lo, d_hi = min(f.d for f in fs), max(f.d for f in fs)
        s_lo = min(f.s for f in fs)
        mid_s = min(max(0.5 * (s_lo + max(f.s for f in fs)), 0.0), line.length)
        off = path_offset(mid_s)
        if d_lo - 0.05 <= off + half_band and d_hi + 0.05 >= off - half_band:
            consider(s_lo, 0.0)

    for ped in obs.pedestrians:
        if not ped.crossing:
            continue
        f = line.project_extended(ped.position)
        if abs(f.d - path_offset(f.s)) <= half_band + 0.3:
            consider(f.s - 0.3, 0.0)

    return best
