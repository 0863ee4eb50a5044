"""Synthetic test worlds.

A world is a heightfield terrain plus axis-aligned box structures and
polygonal rough patches rated by the traversal level needed to cross
them.  The same file also carries the robot team, so one JSON document
fully describes a run.  Scan simulation is vectorized ray casting
against terrain and boxes with Gaussian range noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import DEFAULT_SPECIES, RobotSpecies


@dataclass(frozen=True)
class Pose:
    position: np.ndarray  # (3,)
    yaw: float = 0.0


@dataclass(frozen=True)
class RobotSpec:
    robot_id: int
    species: str
    start: np.ndarray  # (3,)


@dataclass(frozen=True)
class RoughPatch:
    polygon: np.ndarray  # (N, 2) closed implicitly
    level: int           # traversal level required to cross


@dataclass
class ScenarioWorld:
    """Terrain + structures + team for one scenario."""

    bounds_min: np.ndarray
    bounds_max: np.ndarray
    cell_size: float
    heights: np.ndarray                 # (ny, nx) node elevations
    boxes: list[np.ndarray]             # each (2, 3): min corner, max corner
    patches: list[RoughPatch]
    species: tuple[RobotSpecies, ...]
    robots: list[RobotSpec]
    name: str = "unnamed"

    @property
    def footprint_area(self) -> float:
        dx = self.bounds_max[0] - self.bounds_min[0]
        dy = self.bounds_max[1] - self.bounds_min[1]
        return float(dx * dy)


@dataclass(frozen=True)
class SensorModel:
    max_range: float
    rays_azimuth: int = 128
    rays_elevation: int = 32
    # symmetric about the horizon; steeper than the view-acceptance cone
    # so nearby ground is seen well inside the observation-angle limit
    fov_elevation_deg: float = 75.0
    noise_sigma: float = 0.01


def load_scenario(path: str) -> ScenarioWorld:
    """Read a scenario JSON file.

    Expected keys: bounds {min,max}, cell_size, heightfield (row-major
    node elevations), boxes, patches, species, robots.  Species entries
    mirror RobotSpecies fields; a missing species list selects the
    built-in defaults.
    """
    with open(path) as fh:
        data = json.load(fh)
    bmin = np.asarray(data["bounds"]["min"], dtype=float)
    bmax = np.asarray(data["bounds"]["max"], dtype=float)
    cell = float(data["cell_size"])
    nx = int(round((bmax[0] - bmin[0]) / cell)) + 1
    ny = int(round((bmax[1] - bmin[1]) / cell)) + 1
    flat = np.asarray(data["heightfield"], dtype=float)
    if flat.size != nx * ny:
        raise ValueError(
            f"heightfield has {flat.size} samples, expected {ny}x{nx}={nx * ny}"
        )
    heights = flat.reshape(ny, nx)
    boxes = [
        np.array([b["min"], b["max"]], dtype=float) for b in data.get("boxes", [])
    ]
    for b in boxes:
        if np.any(b[1] <= b[0]):
            raise ValueError(f"degenerate box {b.tolist()}")
    patches = [
        RoughPatch(np.asarray(p["polygon"], dtype=float), int(p["level"]))
        for p in data.get("patches", [])
    ]
    if "species" in data:
        species = tuple(RobotSpecies(**s) for s in data["species"])
    else:
        species = DEFAULT_SPECIES
    names = {s.name for s in species}
    robots = []
    for r in data.get("robots", []):
        if r["species"] not in names:
            raise ValueError(f"robot {r['id']} uses unknown species {r['species']!r}")
        robots.append(
            RobotSpec(int(r["id"]), r["species"], np.asarray(r["start"], dtype=float))
        )
    return ScenarioWorld(
        bounds_min=bmin,
        bounds_max=bmax,
        cell_size=cell,
        heights=heights,
        boxes=boxes,
        patches=patches,
        species=species,
        robots=robots,
        name=data.get("name", "unnamed"),
    )


# ---------- terrain ----------

def terrain_height(world: ScenarioWorld, xy: np.ndarray) -> np.ndarray:
    """Bilinear node interpolation; points outside the bounds are clamped."""
    pts = np.atleast_2d(np.asarray(xy, dtype=float))
    cell = world.cell_size
    gx = (pts[:, 0] - world.bounds_min[0]) / cell
    gy = (pts[:, 1] - world.bounds_min[1]) / cell
    ny, nx = world.heights.shape
    gx = np.clip(gx, 0.0, nx - 1.0)
    gy = np.clip(gy, 0.0, ny - 1.0)
    x0 = np.minimum(gx.astype(int), nx - 2)
    y0 = np.minimum(gy.astype(int), ny - 2)
    fx = gx - x0
    fy = gy - y0
    h = world.heights
    z = (
        h[y0, x0] * (1 - fx) * (1 - fy)
        + h[y0, x0 + 1] * fx * (1 - fy)
        + h[y0 + 1, x0] * (1 - fx) * fy
        + h[y0 + 1, x0 + 1] * fx * fy
    )
    return z if np.asarray(xy).ndim > 1 else z


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorized over points."""
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
        inside ^= crosses & (x < xint)
    return inside


def difficulty_at(world: ScenarioWorld, xy: np.ndarray) -> np.ndarray:
    """Traversal level demanded by rough patches; 1 on plain ground."""
    pts = np.atleast_2d(np.asarray(xy, dtype=float))
    level = np.ones(len(pts), dtype=np.int32)
    for patch in world.patches:
        hit = points_in_polygon(pts, patch.polygon)
        level[hit] = np.maximum(level[hit], patch.level)
    return level


# ---------- scan simulation ----------

def _ray_box_hits(origins: np.ndarray, dirs: np.ndarray, box: np.ndarray) -> np.ndarray:
    """Slab test; returns entry distance per ray, inf when missed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (box[0] - origins) * inv
    t2 = (box[1] - origins) * inv
    tnear = np.nanmax(np.minimum(t1, t2), axis=1)
    tfar = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tnear <= tfar) & (tfar > 0.0)
    t = np.where(tnear > 0.0, tnear, tfar)  # origin inside the box still hits
    return np.where(hit, t, np.inf)


def _ray_terrain_hits(
    world: ScenarioWorld, origin: np.ndarray, dirs: np.ndarray, max_range: float
) -> np.ndarray:
    """First terrain crossing per ray by marching plus bisection refine."""
    step = world.cell_size * 0.5
    n_steps = int(math.ceil(max_range / step)) + 1
    ts = np.linspace(step * 0.25, max_range, n_steps)
    pts = origin[None, None, :] + dirs[:, None, :] * ts[None, :, None]
    ground = terrain_height(world, pts[:, :, :2].reshape(-1, 2)).reshape(
        len(dirs), n_steps
    )
    below = pts[:, :, 2] <= ground
    first = np.argmax(below, axis=1)
    any_hit = below.any(axis=1)
    t_hi = np.where(any_hit, ts[first], np.inf)
    t_lo = np.where(first > 0, ts[np.maximum(first - 1, 0)], 0.0)
    # bisection on rays that crossed
    idx = np.nonzero(any_hit)[0]
    lo = t_lo[idx]
    hi = t_hi[idx]
    d = dirs[idx]
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        p = origin[None, :] + d * mid[:, None]
        below_mid = p[:, 2] <= terrain_height(world, p[:, :2])
        hi = np.where(below_mid, mid, hi)
        lo = np.where(below_mid, lo, mid)
    out = np.full(len(dirs), np.inf)
    out[idx] = 0.5 * (lo + hi)
    return out


def scan_directions(sensor: SensorModel, yaw: float) -> np.ndarray:
    az = yaw + np.linspace(0.0, 2.0 * np.pi, sensor.rays_azimuth, endpoint=False)
    el = np.radians(
        np.linspace(
            -sensor.fov_elevation_deg, sensor.fov_elevation_deg, sensor.rays_elevation
        )
    )
    azg, elg = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack(
        [np.cos(elg) * np.cos(azg), np.cos(elg) * np.sin(azg), np.sin(elg)], axis=-1
    )
    return dirs.reshape(-1, 3)


def simulate_scan(
    world: ScenarioWorld,
    pose: Pose,
    sensor: SensorModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """One panoramic scan: (N, 3) surface returns in world frame."""
    origin = np.asarray(pose.position, dtype=float)
    dirs = scan_directions(sensor, pose.yaw)
    t = _ray_terrain_hits(world, origin, dirs, sensor.max_range)
    origins = np.broadcast_to(origin, dirs.shape)
    for box in world.boxes:
        t = np.minimum(t, _ray_box_hits(origins, dirs, box))
    valid = np.isfinite(t) & (t <= sensor.max_range)
    t = t[valid] + rng.normal(0.0, sensor.noise_sigma, size=int(valid.sum()))
    pts = origin[None, :] + dirs[valid] * t[:, None]
    inb = np.all((pts >= world.bounds_min) & (pts <= world.bounds_max), axis=1)
    return pts[inb]


def strip_teammate_returns(
    points: np.ndarray, teammates: Iterable[tuple[np.ndarray, float]]
) -> np.ndarray:
    """Drop returns inside teammate body boxes (position, body radius)."""
    if len(points) == 0:
        return points
    keep = np.ones(len(points), dtype=bool)
    for pos, radius in teammates:
        lo = np.asarray(pos) - radius
        hi = np.asarray(pos) + radius
        inside = np.all((points >= lo) & (points <= hi), axis=1)
        keep &= ~inside
    return points[keep]


# ---------- ground-truth surface ----------

KIND_GROUND = 0
KIND_FACADE = 1


@dataclass
class GroundTruth:
    """Deduplicated surface cells for completeness scoring."""

    centers: np.ndarray  # (M, 3)
    kinds: np.ndarray    # (M,) KIND_* codes
    resolution: float
    keys: set = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.centers)


def _face_samples(lo2: np.ndarray, hi2: np.ndarray, res: float) -> np.ndarray:
    """Tile centers of a rectangle [lo2, hi2] in its own 2D frame."""
    n_u = max(1, int(round((hi2[0] - lo2[0]) / res)))
    n_v = max(1, int(round((hi2[1] - lo2[1]) / res)))
    us = lo2[0] + (np.arange(n_u) + 0.5) * (hi2[0] - lo2[0]) / n_u
    vs = lo2[1] + (np.arange(n_v) + 0.5) * (hi2[1] - lo2[1]) / n_v
    ug, vg = np.meshgrid(us, vs, indexing="ij")
    return np.stack([ug.ravel(), vg.ravel()], axis=1)


def _inside_any_box(points: np.ndarray, boxes: Sequence[np.ndarray], pad: float) -> np.ndarray:
    inside = np.zeros(len(points), dtype=bool)
    for box in boxes:
        inside |= np.all(
            (points > box[0] - pad) & (points < box[1] + pad), axis=1
        )
    return inside


def ground_truth_surface(world: ScenarioWorld, resolution: float) -> GroundTruth:
    """Observable surface cells: terrain plus exposed box faces.

    Cells are keyed on a lattice nudged outward along the face normal so
    that each face of a structure lands in its own cell; a box face
    buried inside terrain or inside another box is skipped.  Ground
    cells under a grounded box footprint are excluded.
    """
    res = resolution
    centers: list[np.ndarray] = []
    kinds: list[int] = []
    keys: set = set()

    def emit(pts: np.ndarray, normal: np.ndarray, kind: int) -> None:
        nudged = pts + normal[None, :] * (res * 0.25)
        cells = np.floor(nudged / res).astype(np.int64)
        for p, c in zip(pts, cells):
            k = (int(c[0]), int(c[1]), int(c[2]), kind)
            if k not in keys:
                keys.add(k)
                centers.append(p)
                kinds.append(kind)

    # terrain cells, skipping grounded-box footprints
    bmin, bmax = world.bounds_min, world.bounds_max
    g2 = _face_samples(bmin[:2], bmax[:2], res)
    gz = terrain_height(world, g2)
    gpts = np.column_stack([g2, gz])
    covered = np.zeros(len(gpts), dtype=bool)
    for box in world.boxes:
        in_xy = np.all((g2 > box[0, :2]) & (g2 < box[1, :2]), axis=1)
        grounded = (box[0, 2] <= gz + 0.25 * res) & (box[1, 2] > gz)
        covered |= in_xy & grounded
    # ground slope decides the cell kind
    eps = 0.5 * world.cell_size
    hx = terrain_height(world, g2 + [eps, 0]) - terrain_height(world, g2 - [eps, 0])
    hy = terrain_height(world, g2 + [0, eps]) - terrain_height(world, g2 - [0, eps])
    slope = np.degrees(np.arctan(np.hypot(hx, hy) / (2 * eps)))
    steep = slope >= 45.0
    up = np.array([0.0, 0.0, 1.0])
    emit(gpts[~covered & ~steep], up, KIND_GROUND)
    emit(gpts[~covered & steep], up, KIND_FACADE)

    # box faces
    for bi, box in enumerate(world.boxes):
        others = [b for j, b in enumerate(world.boxes) if j != bi]
        lo, hi = box
        # four side faces
        for axis, sign in ((0, -1), (0, +1), (1, -1), (1, +1)):
            u_axis = 1 - axis
            plane = lo[axis] if sign < 0 else hi[axis]
            samp2 = _face_samples(
                np.array([lo[u_axis], lo[2]]), np.array([hi[u_axis], hi[2]]), res
            )
            pts = np.empty((len(samp2), 3))
            pts[:, axis] = plane
            pts[:, u_axis] = samp2[:, 0]
            pts[:, 2] = samp2[:, 1]
            normal = np.zeros(3)
            normal[axis] = sign
            buried = pts[:, 2] <= terrain_height(world, pts[:, :2]) + 0.05
            hidden = _inside_any_box(pts + normal * 0.01, others, 0.0)
            emit(pts[~buried & ~hidden], normal, KIND_FACADE)
        # top face
        samp2 = _face_samples(lo[:2], hi[:2], res)
        pts = np.column_stack([samp2, np.full(len(samp2), hi[2])])
        hidden = _inside_any_box(pts + [0, 0, 0.01], others, 0.0)
        emit(pts[~hidden], up, KIND_GROUND)
        # bottom face only when the box floats above the terrain
        underside = np.column_stack([samp2, np.full(len(samp2), lo[2])])
        exposed = lo[2] > terrain_height(world, samp2) + 0.25 * res
        hidden = _inside_any_box(underside - [0, 0, 0.01], others, 0.0)
        emit(underside[exposed & ~hidden], -up, KIND_FACADE)

    return GroundTruth(
        centers=np.asarray(centers, dtype=float).reshape(-1, 3),
        kinds=np.asarray(kinds, dtype=np.uint8),
        resolution=res,
        keys=keys,
    )
