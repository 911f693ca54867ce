"""Shared test oracles: brute-force geometric checks kept deliberately
independent of the library's fast paths."""

import math

import numpy as np

from drivebench.geometry import OrientedBox


def point_in_box(points: np.ndarray, box: OrientedBox) -> np.ndarray:
    """Containment test in the box body frame, inclusive of the boundary."""
    c, s = math.cos(box.center.heading), math.sin(box.center.heading)
    rel = points - np.array([box.center.x, box.center.y])
    u = rel[:, 0] * c + rel[:, 1] * s
    v = -rel[:, 0] * s + rel[:, 1] * c
    return (np.abs(u) <= box.length / 2.0) & (np.abs(v) <= box.width / 2.0)


def box_sample_points(box: OrientedBox, interior_grid: int = 50,
                      edge_samples: int = 600) -> np.ndarray:
    """Corners, dense edge samples, and an interior grid for one box."""
    c, s = math.cos(box.center.heading), math.sin(box.center.heading)
    rot = np.array([[c, -s], [s, c]])
    hl, hw = box.length / 2.0, box.width / 2.0
    pts = [np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])]
    t = np.linspace(-1.0, 1.0, edge_samples)
    pts.append(np.column_stack([t * hl, np.full_like(t, hw)]))
    pts.append(np.column_stack([t * hl, np.full_like(t, -hw)]))
    pts.append(np.column_stack([np.full_like(t, hl), t * hw]))
    pts.append(np.column_stack([np.full_like(t, -hl), t * hw]))
    u = np.linspace(-1.0, 1.0, interior_grid)
    gx, gy = np.meshgrid(u * hl, u * hw)
    pts.append(np.column_stack([gx.ravel(), gy.ravel()]))
    local = np.vstack(pts)
    return local @ rot.T + np.array([box.center.x, box.center.y])


def boxes_overlap_sampled(a: OrientedBox, b: OrientedBox) -> bool:
    """Point-sampling collision oracle: any sampled point of one box
    contained in the other."""
    if point_in_box(box_sample_points(a), b).any():
        return True
    return bool(point_in_box(box_sample_points(b), a).any())


def sat_margin(a: OrientedBox, b: OrientedBox) -> float:
    """Signed separation margin: positive = penetration depth, negative =
    clearance along the most separating axis."""
    ca, cb = a.corners(), b.corners()
    margin = math.inf
    for box in (a, b):
        h = box.center.heading
        for axis in ((math.cos(h), math.sin(h)), (-math.sin(h), math.cos(h))):
            pa = ca @ np.asarray(axis)
            pb = cb @ np.asarray(axis)
            overlap = min(pa.max(), pb.max()) - max(pa.min(), pb.min())
            margin = min(margin, overlap)
    return margin


def straight_offset_path_clear(graph, lane_id, boxes, d, s_lo, s_hi,
                               ego_length=4.6, ego_width=1.85, step=0.25):
    """Sweep an ego box along the lane at constant lateral offset d and
    report whether it stays collision-free."""
    from drivebench.geometry import boxes_collide

    line = graph.lane(lane_id).centerline
    s_lo = max(0.0, s_lo)
    s_hi = min(line.length, s_hi)
    s = s_lo
    while s <= s_hi:
        pose = line.interpolate_frenet(s, d)
        ego = OrientedBox(pose, ego_length, ego_width)
        if any(boxes_collide(ego, b) for b in boxes):
            return False
        s += step
    return True


def corridor_passable(graph, lane_id, boxes, d_values, s_lo, s_hi):
    """Whether any constant-offset straight-through path in d_values clears
    all the boxes over [s_lo, s_hi]."""
    return any(
        straight_offset_path_clear(graph, lane_id, boxes, d, s_lo, s_hi)
        for d in d_values
    )


def min_distance_to_polyline(point, pts: np.ndarray, samples: int = 20000):
    """Brute-force nearest distance and arc position via dense sampling."""
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    ss = np.linspace(0.0, cum[-1], samples)
    idx = np.clip(np.searchsorted(cum, ss, side="right") - 1, 0, len(seg_len) - 1)
    t = ss - cum[idx]
    xy = pts[idx] + (t / seg_len[idx])[:, None] * seg[idx]
    d = np.hypot(xy[:, 0] - point[0], xy[:, 1] - point[1])
    k = int(np.argmin(d))
    return float(ss[k]), float(d[k])
