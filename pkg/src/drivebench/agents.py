"""Closed-loop background actors: IDM longitudinal control, the
conservative/assertive lead-perception rules, and triggered pedestrians.

Agents are lane-keepers: they follow their lane centerline, never change
lanes, and brake for whatever `select_lead` reports ahead of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .geometry import LaneGraph, OrientedBox, Polyline, Pose2D, wrap_angle

# Emergency deceleration cap: last-resort braking, prevents teleport-stops.
EMERGENCY_DECEL = -8.0

# Shared vehicle footprint defaults [m].
VEHICLE_LENGTH = 4.6
VEHICLE_WIDTH = 1.85

# Lateral half-width of the band a lane-keeping vehicle sweeps; obstacles
# outside it (e.g. a bus on the shoulder) are not treated as leads.
SWEPT_BAND_HALF_WIDTH = VEHICLE_WIDTH / 2.0 + 0.25


@dataclass(frozen=True)
class IdmParams:
    v0: float = 13.9        # desired speed [m/s]
    T: float = 1.5          # time headway [s]
    s0: float = 4.0         # jam distance [m]
    a_max: float = 1.5      # max acceleration [m/s^2]
    b_comf: float = 2.0     # comfortable deceleration [m/s^2]
    delta: float = 4.0      # acceleration exponent

    def __post_init__(self):
        if min(self.v0, self.T, self.s0, self.a_max, self.b_comf) <= 0:
            raise ValueError("IDM parameters must be positive")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")


def idm_acceleration(v: float, v_lead: Optional[float], gap: Optional[float],
                     p: IdmParams) -> float:
    """Longitudinal acceleration of the intelligent-driver car-following law.

    a = a_max * [1 - (v/v0)^delta - (s*/gap)^2],
    s* = s0 + v*T + v*(v - v_lead) / (2*sqrt(a_max*b_comf)).

    Without a lead only the free-flow term applies. Output is clamped below
    at the emergency cap.
    """
    free = 1.0 - (v / p.v0) ** p.delta
    if v_lead is None or gap is None:
        a = p.a_max * free
    else:
        if gap <= 0:
            raise ValueError(f"gap must be positive, got {gap}")
        s_star = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b_comf))
        s_star = max(s_star, p.s0)
        a = p.a_max * (free - (s_star / gap) ** 2)
    return max(a, EMERGENCY_DECEL)


def equilibrium_gap(v: float, p: IdmParams) -> float:
    """Steady-state bumper gap while following a lead at the same speed v."""
    ratio = 1.0 - (v / p.v0) ** p.delta
    if ratio <= 0:
        return math.inf
    return (p.s0 + v * p.T) / math.sqrt(ratio)


def equilibrium_speed(gap: float, p: IdmParams) -> float:
    """Speed at which idm_acceleration is zero for the given steady gap
    (same-speed lead); 0 when the gap is at or below the jam distance."""
    if gap <= p.s0:
        return 0.0

    def f(v):
        return (v / p.v0) ** p.delta + ((p.s0 + v * p.T) / gap) ** 2 - 1.0

    lo, hi = 0.0, p.v0
    if f(hi) <= 0:
        return p.v0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class AgentState:
    lane: str
    s: float                 # arc position of the box center along the lane
    speed: float
    policy: str              # "conservative" | "assertive"
    params: IdmParams
    box: OrientedBox
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("agent speed must be >= 0")
        if self.policy not in ("conservative", "assertive"):
            raise ValueError(f"unknown policy {self.policy!r}")


def lane_pose(graph: LaneGraph, lane_id: str, s: float, d: float = 0.0) -> Pose2D:
    """Pose at (s, d) on a lane, extended along the end tangents past the ends."""
    line = graph.lane(lane_id).centerline
    if 0.0 <= s <= line.length:
        return line.interpolate_frenet(s, d)
    if s > line.length:
        base_s, over = line.length, s - line.length
    else:
        base_s, over = 0.0, s
    h = line.tangent_at(base_s)
    p = line.interpolate_frenet(base_s, d)
    return Pose2D(p.x + over * math.cos(h), p.y + over * math.sin(h), h)


def make_agent(graph: LaneGraph, lane_id: str, s: float, speed: float,
               policy: str = "conservative", params: Optional[IdmParams] = None,
               length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH) -> AgentState:
    p = params or IdmParams(v0=graph.lane(lane_id).speed_limit)
    pose = lane_pose(graph, lane_id, s)
    return AgentState(lane=lane_id, s=s, speed=speed, policy=policy, params=p,
                      box=OrientedBox(pose, length, width), length=length, width=width)


@dataclass(frozen=True)
class PedestrianState:
    path: Polyline
    walk_speed: float
    trigger_distance: float
    lane: str                    # the lane whose corridor the path crosses
    phase: str = "waiting"       # waiting -> crossing -> done
    dist_along: float = 0.0

    def __post_init__(self):
        if self.phase not in ("waiting", "crossing", "done"):
            raise ValueError(f"unknown phase {self.phase!r}")

    @property
    def position(self) -> tuple[float, float]:
        s = min(self.dist_along, self.path.length)
        p = self.path.interpolate_frenet(s, 0.0)
        return (p.x, p.y)

    @property
    def heading(self) -> float:
        return self.path.tangent_at(min(self.dist_along, self.path.length))

    @property
    def velocity(self) -> tuple[float, float]:
        if self.phase != "crossing":
            return (0.0, 0.0)
        h = self.heading
        return (self.walk_speed * math.cos(h), self.walk_speed * math.sin(h))

    def box(self) -> OrientedBox:
        x, y = self.position
        return OrientedBox(Pose2D(x, y, self.heading), 0.6, 0.6)


@dataclass
class TrafficWorld:
    """Per-tick view of everything an agent can react to."""
    graph: LaneGraph
    agents: Sequence[AgentState]
    # lane id -> static blocking spans (s_near, s_far) inside the swept band
    lane_blockers: dict[str, list[tuple[float, float]]]
    pedestrians: Sequence[PedestrianState] = ()


def lateral_half_extent(box: OrientedBox, lane_heading: float) -> float:
    """Half-extent of a box projected across a lane direction."""
    rel = wrap_angle(box.center.heading - lane_heading)
    return abs(math.sin(rel)) * box.length / 2.0 + abs(math.cos(rel)) * box.width / 2.0


def ego_counts_in_lane(ego_box: OrientedBox, lane_width: float,
                       d: float, lane_heading: float, policy: str) -> bool:
    """Lead-perception rule: conservative agents react to the ego as soon as
    its footprint overlaps the lane corridor; assertive agents only once it
    is fully merged (center in lane and |d| < lane_width / 4)."""
    if policy == "conservative":
        return abs(d) <= lane_width / 2.0 + lateral_half_extent(ego_box, lane_heading)
    return abs(d) < lane_width / 4.0


def select_lead(agent: AgentState, world: TrafficWorld,
                ego_box: Optional[OrientedBox], ego_speed: float
                ) -> Optional[tuple[float, float]]:
    """Nearest in-lane entity ahead of the agent as (lead speed, bumper gap).

    Same-lane agents always count. The ego counts per the agent's policy
    rule. Static blockers and crossing pedestrians inside the swept band
    always count (speed 0).
    """
    line = world.graph.lane(agent.lane).centerline
    lane_width = world.graph.lane(agent.lane).width
    front = agent.s + agent.length / 2.0
    best: Optional[tuple[float, float]] = None  # (gap, v_lead)

    def consider(gap: float, v_lead: float):
        nonlocal best
        if gap > 0 and (best is None or gap < best[0]):
            best = (gap, v_lead)

    for other in world.agents:
        if other is agent or other.lane != agent.lane:
            continue
        consider(other.s - other.length / 2.0 - front, other.speed)

    if ego_box is not None:
        f = line.project((ego_box.center.x, ego_box.center.y))
        heading = line.tangent_at(f.s)
        if ego_counts_in_lane(ego_box, lane_width, f.d, heading, agent.policy):
            half = (abs(math.cos(wrap_angle(ego_box.center.heading - heading)))
                    * ego_box.length / 2.0
                    + abs(math.sin(wrap_angle(ego_box.center.heading - heading)))
                    * ego_box.width / 2.0)
            consider(f.s - half - front, ego_speed)

    for s_near, _s_far in world.lane_blockers.get(agent.lane, ()):
        consider(s_near - front, 0.0)

    for ped in world.pedestrians:
        if ped.phase != "crossing":
            continue
        f = line.project(ped.position)
        if abs(f.d) <= SWEPT_BAND_HALF_WIDTH + 0.3:
            consider(f.s - 0.3 - front, 0.0)

    if best is None:
        return None
    return (best[1], best[0])


def step_vehicle_agent(agent: AgentState, world: TrafficWorld,
                       ego_box: Optional[OrientedBox], ego_speed: float,
                       dt: float) -> AgentState:
    """Advance one agent by dt: IDM acceleration against its lead, then move
    along the lane centerline (following successors, never changing lane)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lead = select_lead(agent, world, ego_box, ego_speed)
    if lead is None:
        a = idm_acceleration(agent.speed, None, None, agent.params)
    else:
        v_lead, gap = lead
        a = idm_acceleration(agent.speed, v_lead, max(gap, 0.01), agent.params)
    speed = max(0.0, agent.speed + a * dt)
    s = agent.s + speed * dt
    lane_id = agent.lane
    line = world.graph.lane(lane_id).centerline
    while s > line.length:
        succ = sorted(world.graph.lane(lane_id).successors)
        if not succ:
            break
        s -= line.length
        lane_id = succ[0]
        line = world.graph.lane(lane_id).centerline
    pose = lane_pose(world.graph, lane_id, s)
    box = OrientedBox(pose, agent.length, agent.width)
    return replace(agent, lane=lane_id, s=s, speed=speed, box=box)


def step_pedestrian(ped: PedestrianState, graph: LaneGraph,
                    ego_pose: Pose2D, ego_speed: float, dt: float) -> PedestrianState:
    """Advance the pedestrian phase machine: waiting until the approaching
    ego is within trigger distance, then crossing at walk speed to the end.
    Pedestrians never yield."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if ped.phase == "done":
        return ped
    if ped.phase == "waiting":
        line = graph.lane(ped.lane).centerline
        entry = line.project(ped.path.points[0])
        ego_f = line.project((ego_pose.x, ego_pose.y))
        dist = entry.s - ego_f.s
        if 0.0 < dist <= ped.trigger_distance and ego_speed > 0.2:
            return replace(ped, phase="crossing")
        return ped
    dist = ped.dist_along + ped.walk_speed * dt
    if dist >= ped.path.length:
        return replace(ped, phase="done", dist_along=ped.path.length)
    return replace(ped, dist_along=dist)
