"""Prompt construction, response parsing, the external LLM client contract,
and the deterministic scripted selector used for testing and CI.

The wire protocol is the OpenAI-style chat-completion schema; the scripted
selector needs no network at all.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import requests

from .geometry import wrap_angle
from .planners.base import Observation, current_route_lane, ego_frenet

DEFAULT_TIMEOUT = 30.0


class NoLabelFound(Exception):
    """No offered behavior label occurs in the response text."""


class MalformedTrajectory(Exception):
    """Response does not contain 16 finite waypoint pairs."""


class LlmTimeout(Exception):
    pass


class LlmTransportError(Exception):
    pass


class LlmBadStatus(Exception):
    def __init__(self, status: int, body: str):
        super().__init__(f"LLM endpoint returned {status}: {body[:200]}")
        self.status = status


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str
    model: str
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = 2
    temperature: float = 0.0
    api_key: Optional[str] = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @classmethod
    def from_env(cls, **overrides) -> "ClientConfig":
        return cls(
            endpoint=overrides.get("endpoint", os.environ.get("LLM_ENDPOINT", "")),
            model=overrides.get("model", os.environ.get("LLM_MODEL", "")),
            api_key=overrides.get("api_key", os.environ.get("LLM_API_KEY")),
            timeout=overrides.get("timeout", DEFAULT_TIMEOUT),
        )


@dataclass(frozen=True)
class PromptBundle:
    task_instruction: str
    perception_context: str
    ego_states: str
    mission_goal: str
    options: str

    def __post_init__(self):
        for name in ("task_instruction", "perception_context", "ego_states",
                     "mission_goal", "options"):
            if not getattr(self, name).strip():
                raise ValueError(f"prompt section {name} must be non-empty")

    def user_content(self) -> str:
        return "\n\n".join([
            "Perception:\n" + self.perception_context,
            "Ego states:\n" + self.ego_states,
            "Mission goal:\n" + self.mission_goal,
            self.options,
        ])


@dataclass(frozen=True)
class SelectorResponse:
    chosen_label: str
    rationale: str = ""


# ---------------------------------------------------------------------------
# scene rendering


def _ego_frame(obs: Observation, point) -> tuple[float, float]:
    h = obs.ego_box.center.heading
    dx = point[0] - obs.ego_box.center.x
    dy = point[1] - obs.ego_box.center.y
    c, s = math.cos(h), math.sin(h)
    return (dx * c + dy * s, -dx * s + dy * c)


def render_scene_description(obs: Observation) -> tuple[str, str]:
    """(perception context, ego states) sections: ego-frame positions and
    velocities of the nearest agents, obstacles with kinds, lane layout.
    Numbers at one decimal, fixed field order."""
    lines = []
    ranked = sorted(
        obs.agents,
        key=lambda a: (a.box.center.x - obs.ego_box.center.x) ** 2
                      + (a.box.center.y - obs.ego_box.center.y) ** 2)
    for agent in ranked[:10]:
        lon, lat = _ego_frame(obs, (agent.box.center.x, agent.box.center.y))
        rel = wrap_angle(agent.box.center.heading - obs.ego_box.center.heading)
        lines.append(
            f"- vehicle at longitudinal {lon:+.1f} m, lateral {lat:+.1f} m, "
            f"speed {agent.speed:.1f} m/s, relative heading {rel:+.1f} rad")
    for ped in obs.pedestrians:
        lon, lat = _ego_frame(obs, ped.position)
        state = "crossing" if ped.crossing else "waiting"
        lines.append(f"- pedestrian ({state}) at longitudinal {lon:+.1f} m, "
                     f"lateral {lat:+.1f} m")
    for o in obs.obstacles:
        lon, lat = _ego_frame(obs, (o.box.center.x, o.box.center.y))
        lines.append(f"- {o.kind} at longitudinal {lon:+.1f} m, lateral {lat:+.1f} m")
    if not lines:
        lines.append("- no agents, pedestrians or obstacles nearby")
    perception = "\n".join(lines)

    lane_id = obs.ego_lane or current_route_lane(obs)
    lane = obs.graph.lane(lane_id)
    f = ego_frenet(obs, lane_id)
    neighbors = []
    if lane.left_neighbor:
        neighbors.append(f"left neighbor {lane.left_neighbor}")
    if lane.right_neighbor:
        neighbors.append(f"right neighbor {lane.right_neighbor}")
    ego = "\n".join([
        f"- current lane: {lane_id} ({', '.join(neighbors) if neighbors else 'no neighbors'})",
        f"- lateral offset from lane center: {f.d:+.1f} m",
        f"- speed: {obs.ego_speed:.1f} m/s, acceleration: {obs.ego_accel:+.1f} m/s^2",
        f"- lane speed limit: {lane.speed_limit:.1f} m/s",
    ])
    return perception, ego


def _mission_goal(obs: Observation) -> str:
    lanes = ", ".join(obs.route.lane_sequence)
    return (f"Lanes on route: {lanes}. "
            f"Goal position at ({obs.route.goal_pose.x:.1f}, "
            f"{obs.route.goal_pose.y:.1f}).")


BEHAVIOR_TASK = (
    "You are the behavior planner of an autonomous vehicle. Analyze the "
    "described traffic scene step by step, then select exactly one of the "
    "offered behaviors. The last line of your answer must contain only the "
    "chosen behavior label, verbatim.")

WAYPOINTS_TASK = (
    "You are the motion planner of an autonomous vehicle. Reason about the "
    "described traffic scene step by step, then output the planned "
    "trajectory for the next 8 seconds as 16 waypoints at 0.5 s spacing in "
    "the ego frame (x forward, y left, meters), formatted as "
    "(x1, y1), (x2, y2), ... on the final line.")


def build_behavior_prompt(obs: Observation, options: Sequence) -> PromptBundle:
    """Zero-shot behavior-selection prompt; options rendered as an enumerated
    list, decision demanded verbatim on the final line."""
    if not options:
        raise ValueError("no behavior options to offer")
    perception, ego = render_scene_description(obs)
    rendered = []
    for i, opt in enumerate(options, start=1):
        extra = ""
        if opt.label == "overtake_obstacle":
            extra = (f" (requires lateral offset {opt.lateral_offset:+.1f} m; "
                     f"obstacle ends {opt.obstacle_far_s - ego_frenet(obs, opt.centerline).s:.1f} m ahead)"
                     if opt.obstacle_far_s is not None else "")
        rendered.append(f"{i}. {opt.label}{extra}")
    options_text = ("Available behaviors:\n" + "\n".join(rendered)
                    + "\nAnswer with exactly one label from the list.")
    return PromptBundle(
        task_instruction=BEHAVIOR_TASK,
        perception_context=perception,
        ego_states=ego,
        mission_goal=_mission_goal(obs),
        options=options_text,
    )


def build_waypoints_prompt(obs: Observation) -> PromptBundle:
    perception, ego = render_scene_description(obs)
    return PromptBundle(
        task_instruction=WAYPOINTS_TASK,
        perception_context=perception,
        ego_states=ego,
        mission_goal=_mission_goal(obs),
        options="Output format: 16 waypoint pairs at 0.5 s spacing, ego frame.",
    )


# ---------------------------------------------------------------------------
# response parsing


def parse_behavior_response(text: str, options: Sequence) -> SelectorResponse:
    """Case-insensitive search for offered labels; the LAST occurrence wins
    (chain-of-thought text precedes the decision)."""
    lowered = text.lower()
    best = None  # (end position, label)
    for opt in options:
        label = opt.label if hasattr(opt, "label") else str(opt)
        for variant in (label.lower(), label.lower().replace("_", " ")):
            pos = lowered.rfind(variant)
            if pos >= 0:
                end = pos + len(variant)
                if best is None or end > best[0]:
                    best = (end, label, pos)
    if best is None:
        raise NoLabelFound(f"none of the offered labels occurs in: {text[:120]!r}")
    return SelectorResponse(chosen_label=best[1], rationale=text[:best[2]].strip())


_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_SEPARATORS = set(" \t\r\n,;:()[]{}")


def parse_waypoints_response(text: str, n_points: int = 16) -> list[tuple[float, float]]:
    """Extract the first run of >= n_points numeric pairs (numbers separated
    only by whitespace/comma/bracket punctuation); exactly n_points pairs
    are consumed."""
    matches = list(_NUMBER.finditer(text))
    runs: list[list[float]] = []
    current: list[float] = []
    prev_end = None
    for m in matches:
        if prev_end is not None and set(text[prev_end:m.start()]) - _SEPARATORS:
            if current:
                runs.append(current)
            current = []
        current.append(float(m.group()))
        prev_end = m.end()
    if current:
        runs.append(current)
    for run in runs:
        if len(run) >= 2 * n_points:
            values = run[: 2 * n_points]
            if not all(math.isfinite(v) for v in values):
                raise MalformedTrajectory("non-finite waypoint values")
            return [(values[2 * i], values[2 * i + 1]) for i in range(n_points)]
    raise MalformedTrajectory(
        f"expected a run of {n_points} numeric pairs, found runs of sizes "
        f"{[len(r) // 2 for r in runs]}")


# ---------------------------------------------------------------------------
# scripted oracle


def _oncoming_within_headway(obs: Observation, horizon_s: float = 8.0) -> bool:
    lane_id = obs.ego_lane or current_route_lane(obs)
    line = obs.graph.lane(lane_id).centerline
    ego_f = ego_frenet(obs, lane_id)
    ego_h = line.tangent_at(min(max(ego_f.s, 0.0), line.length))
    for agent in obs.agents:
        rel = wrap_angle(agent.box.center.heading - ego_h)
        if math.cos(rel) > -0.5:
            continue
        f = line.project_extended((agent.box.center.x, agent.box.center.y))
        dist = f.s - ego_f.s
        if dist <= 0:
            continue
        closing = max(agent.speed + obs.ego_speed, 0.5)
        if dist / closing <= horizon_s:
            return True
    return False


def _target_lane_slot(obs: Observation, target_lane: str) -> float:
    """Length of the free slot around the ego's projected position on the
    target lane (inf when empty)."""
    line = obs.graph.lane(target_lane).centerline
    ego_f = line.project_extended((obs.ego_box.center.x, obs.ego_box.center.y))
    ahead = math.inf
    behind = -math.inf
    for agent in obs.agents:
        if agent.lane != target_lane:
            continue
        f = line.project_extended((agent.box.center.x, agent.box.center.y))
        rear = f.s - agent.box.length / 2.0
        front = f.s + agent.box.length / 2.0
        if f.s >= ego_f.s:
            ahead = min(ahead, rear)
        else:
            behind = max(behind, front)
    if math.isinf(ahead) and math.isinf(behind):
        return math.inf
    lo = behind if math.isfinite(behind) else ego_f.s - 200.0
    hi = ahead if math.isfinite(ahead) else ego_f.s + 200.0
    return hi - lo


def scripted_oracle(scenario_type, obs: Observation, options: Sequence) -> SelectorResponse:
    """Deterministic behavior selection standing in for an LLM: overtake a
    blocked lane when the oncoming lane is clear, stop and wait otherwise;
    merge toward the goal when the target-lane slot is wide enough."""
    if not options:
        raise ValueError("no options offered")
    labels = {opt.label: opt for opt in options}
    if "overtake_obstacle" in labels:
        if _oncoming_within_headway(obs):
            if "stop_and_wait" in labels:
                return SelectorResponse("stop_and_wait", "oncoming traffic too close")
        return SelectorResponse("overtake_obstacle", "lane blocked, oncoming side clear")
    lane_id = obs.ego_lane or current_route_lane(obs)
    seq = obs.route.lane_sequence
    if lane_id in seq:
        idx = seq.index(lane_id)
        if idx + 1 < len(seq):
            nxt = seq[idx + 1]
            lane = obs.graph.lane(lane_id)
            direction = None
            if nxt == lane.left_neighbor:
                direction = "merge_left"
            elif nxt == lane.right_neighbor:
                direction = "merge_right"
            if direction and direction in labels:
                if _target_lane_slot(obs, nxt) >= 15.0:
                    return SelectorResponse(direction, "gap available toward goal")
                return SelectorResponse("follow_lane", "waiting for a gap")
    return SelectorResponse("follow_lane", "nothing to do")


# ---------------------------------------------------------------------------
# external client


def llm_call(prompt: PromptBundle, cfg: ClientConfig) -> str:
    """POST a chat-completion request (system = task instruction, user =
    remaining sections); retries transport errors up to max_retries."""
    if not cfg.endpoint:
        raise LlmTransportError("no endpoint configured")
    body = {
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": prompt.task_instruction},
            {"role": "user", "content": prompt.user_content()},
        ],
        "temperature": cfg.temperature,
    }
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"
    last_transport: Optional[Exception] = None
    for _ in range(cfg.max_retries + 1):
        try:
            resp = requests.post(cfg.endpoint, json=body, headers=headers,
                                 timeout=cfg.timeout)
        except requests.Timeout as exc:
            raise LlmTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            last_transport = exc
            continue
        if not 200 <= resp.status_code < 300:
            raise LlmBadStatus(resp.status_code, resp.text)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            raise LlmBadStatus(resp.status_code,
                               f"unexpected payload: {resp.text[:200]}") from exc
    raise LlmTransportError(str(last_transport))


class ScriptedSelector:
    """Network-free behavior selector driven by the scripted oracle."""

    def __init__(self, scenario_type=None):
        self.scenario_type = scenario_type

    def select(self, obs: Observation, options: Sequence) -> SelectorResponse:
        return scripted_oracle(self.scenario_type, obs, options)


class LlmBehaviorSelector:
    """Behavior selector backed by an external chat endpoint; keeps an audit
    log of raw prompts and responses."""

    def __init__(self, cfg: ClientConfig):
        self.cfg = cfg
        self.audit: list[dict] = []

    def select(self, obs: Observation, options: Sequence) -> SelectorResponse:
        prompt = build_behavior_prompt(obs, options)
        raw = llm_call(prompt, self.cfg)
        self.audit.append({"time": obs.time, "prompt": prompt.user_content(),
                           "response": raw})
        return parse_behavior_response(raw, options)

    def take_audit(self) -> list[dict]:
        out, self.audit = self.audit, []
        return out
