"""Collision avoidance between teammates sharing short path previews.

Each robot broadcasts the next stretch of its route.  Every tick each
agent rechecks all pairs: where two previews come closer than the sum
of body radii plus a margin, the robot that would reach the meeting
point later holds still for the tick (ties go against the higher id).
A held robot re-evaluates continuously, so it resumes by itself once
the other has passed.

Planning-level holds are advisory; the final guard is a proximity stop
on the executed motion that refuses any step both closing in on and
already near another body.  Robots that stand still long enough turn
into inflated obstacle boxes for everyone else's rerouting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

CLEARANCE_MARGIN = 0.2     # m added to the body-radius sum


@dataclass
class SharedPath:
    robot_id: int
    radius: float
    speed: float
    points: np.ndarray        # (M, 3) upcoming positions, first is current


@dataclass(frozen=True)
class Conflict:
    id_a: int
    id_b: int
    distance: float
    arc_a: float              # path length until the meeting point
    arc_b: float

    def holder(self, speed_a: float, speed_b: float) -> int:
        """Whoever gets there later yields; higher id on exact ties."""
        t_a = self.arc_a / max(speed_a, 1e-9)
        t_b = self.arc_b / max(speed_b, 1e-9)
        if t_a == t_b:
            return max(self.id_a, self.id_b)
        return self.id_b if t_b > t_a else self.id_a


def truncate_path(points: np.ndarray, horizon: float) -> np.ndarray:
    """Prefix of a polyline up to the horizon, keeping the crossing point."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) <= 1:
        return pts.copy()
    out = [pts[0]]
    walked = 0.0
    for i in range(1, len(pts)):
        step = float(np.linalg.norm(pts[i] - pts[i - 1]))
        out.append(pts[i])
        walked += step
        if walked >= horizon:
            break
    return np.array(out)


def _closest_params(a0, a1, b0, b1) -> tuple[float, float, float]:
    """(ta, tb, distance) of the closest approach of two XY segments."""
    u = a1 - a0
    v = b1 - b0
    w = a0 - b0
    uu = float(np.dot(u, u))
    vv = float(np.dot(v, v))
    uv = float(np.dot(u, v))
    uw = float(np.dot(u, w))
    vw = float(np.dot(v, w))
    denom = uu * vv - uv * uv

    def clamp(x):
        return min(1.0, max(0.0, x))

    candidates = []
    if denom > 1e-12:
        ta = clamp((uv * vw - vv * uw) / denom)
    else:
        ta = 0.0
    # coordinate refinement from both directions keeps the clamped
    # minimum of the convex quadratic
    for seed in {ta, 0.0, 1.0}:
        tb = clamp((seed * uv + vw) / vv) if vv > 1e-12 else 0.0
        ta2 = clamp((tb * uv - uw) / uu) if uu > 1e-12 else 0.0
        d = float(np.linalg.norm((a0 + ta2 * u) - (b0 + tb * v)))
        candidates.append((d, ta2, tb))
    d, ta, tb = min(candidates)
    return ta, tb, d


def path_conflict(
    a_points: np.ndarray, b_points: np.ndarray, threshold: float
) -> Optional[tuple[float, float, float]]:
    """Earliest approach of two previews under the threshold.

    Returns (arc_a, arc_b, distance) for the conflicting pair closest
    along the first path, or None.  Only x and y matter.
    """
    a = np.asarray(a_points, dtype=float).reshape(-1, 3)[:, :2]
    b = np.asarray(b_points, dtype=float).reshape(-1, 3)[:, :2]
    if len(a) == 1:
        a = np.vstack([a, a])
    if len(b) == 1:
        b = np.vstack([b, b])
    best = None
    arc_a0 = 0.0
    for i in range(len(a) - 1):
        seg_a = a[i + 1] - a[i]
        len_a = float(np.linalg.norm(seg_a))
        arc_b0 = 0.0
        for j in range(len(b) - 1):
            seg_b = b[j + 1] - b[j]
            len_b = float(np.linalg.norm(seg_b))
            ta, tb, d = _closest_params(a[i], a[i + 1], b[j], b[j + 1])
            if d < threshold:
                hit = (arc_a0 + ta * len_a, arc_b0 + tb * len_b, d)
                if best is None or hit[0] < best[0]:
                    best = hit
            arc_b0 += len_b
        arc_a0 += len_a
    return best


def decide_holds(paths: Sequence[SharedPath]) -> tuple[set[int], list[Conflict]]:
    """Who stands still this tick, from everyone's shared previews."""
    holds: set[int] = set()
    conflicts: list[Conflict] = []
    ordered = sorted(paths, key=lambda p: p.robot_id)
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            a, b = ordered[i], ordered[j]
            threshold = a.radius + b.radius + CLEARANCE_MARGIN
            hit = path_conflict(a.points, b.points, threshold)
            if hit is None:
                continue
            conflict = Conflict(a.robot_id, b.robot_id, hit[2], hit[0], hit[1])
            conflicts.append(conflict)
            holds.add(conflict.holder(a.speed, b.speed))
    return holds, conflicts


def proximity_stop(
    current: np.ndarray,
    proposed: np.ndarray,
    others: Sequence[tuple[np.ndarray, float]],
    radius: float,
) -> bool:
    """True when the step must be cancelled.

    A step is vetoed when it ends close to another body while reducing
    the separation; stepping away from a near body stays allowed.
    """
    for pos, other_radius in others:
        floor = radius + other_radius + CLEARANCE_MARGIN
        d_now = float(np.linalg.norm(np.asarray(current)[:2] - np.asarray(pos)[:2]))
        d_new = float(np.linalg.norm(np.asarray(proposed)[:2] - np.asarray(pos)[:2]))
        if d_new < floor and d_new < d_now:
            return True
    return False


def stationary_obstacle(
    position: np.ndarray, radius: float, inflate: float
) -> np.ndarray:
    """Axis-aligned box around a parked robot, grown by the inflation."""
    p = np.asarray(position, dtype=float)
    r = radius + inflate
    lo = p - np.array([r, r, 1.0])
    hi = p + np.array([r, r, 1.0])
    return np.stack([lo, hi])
