"""Centerline-following IDM planner: zero lateral offset on the current
route lane, longitudinal profile by IDM against the nearest lead, never a
lane change."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..agents import VEHICLE_LENGTH, IdmParams, idm_acceleration
from .base import (
    N_SAMPLES,
    STEP,
    Observation,
    Trajectory,
    current_route_lane,
    ego_frenet,
    nearest_lead,
)


def idm_rollout(v_start: float, gap0: Optional[float], v_lead: float,
                params: IdmParams, n: int = N_SAMPLES, dt: float = STEP
                ) -> tuple[np.ndarray, np.ndarray]:
    """Forward-integrate IDM for n samples against a constant-velocity lead
    (or free flow when gap0 is None); returns (arc offsets, speeds)."""
    s = np.zeros(n)
    v = np.zeros(n)
    v[0] = max(0.0, v_start)
    for k in range(1, n):
        if gap0 is None:
            a = idm_acceleration(v[k - 1], None, None, params)
        else:
            gap = gap0 + v_lead * (k - 1) * dt - s[k - 1]
            a = idm_acceleration(v[k - 1], v_lead, max(gap, 0.01), params)
        v[k] = max(0.0, v[k - 1] + a * dt)
        s[k] = s[k - 1] + v[k] * dt
    return s, v


def centerline_trajectory(obs: Observation, lane_id: str, s_arr: np.ndarray,
                          v_arr: np.ndarray, d_arr=None) -> Trajectory:
    """Embed an arc-length profile on a lane centerline (plus optional
    lateral offsets) into a timed trajectory."""
    line = obs.graph.lane(lane_id).centerline
    d = np.zeros_like(s_arr) if d_arr is None else np.asarray(d_arr, dtype=float)
    x, y, tangent = line.interpolate_many(s_arr, d)
    heading = _path_headings(x, y, tangent)
    t = np.arange(len(s_arr)) * STEP
    return Trajectory(t, x, y, heading, v_arr)


def _path_headings(x: np.ndarray, y: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """Finite-difference headings along the embedded path; tangent headings
    where the path stalls."""
    dx = np.diff(x)
    dy = np.diff(y)
    ds = np.hypot(dx, dy)
    heading = tangent.copy()
    moving = ds > 1e-6
    idx = np.where(moving)[0]
    if len(idx):
        heading[idx] = np.arctan2(dy[idx], dx[idx])
        # carry the last moving heading through stalled samples
        last = heading[idx[-1]]
        for k in range(int(idx[-1]) + 1, len(heading)):
            heading[k] = last
    return heading


@dataclass
class IdmPlanner:
    params: Optional[IdmParams] = None
    name: str = "idm"

    def plan(self, obs: Observation) -> Trajectory:
        lane_id = current_route_lane(obs)
        lane = obs.graph.lane(lane_id)
        params = self.params or IdmParams(v0=lane.speed_limit)
        f = ego_frenet(obs, lane_id)
        front = f.s + VEHICLE_LENGTH / 2.0
        lead = nearest_lead(obs, lane_id, front)
        if lead is None:
            gap0, v_lead = None, 0.0
        else:
            gap0 = lead[0] - front
            v_lead = max(0.0, lead[1])
            if gap0 <= 0:
                gap0 = 0.01
        ds, v = idm_rollout(obs.ego_speed, gap0, v_lead, params)
        return centerline_trajectory(obs, lane_id, f.s + ds, v)
