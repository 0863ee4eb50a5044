"""Viewpoint generation over the fused supervoxel map.

Incomplete supervoxels come in two flavors.  Remote targets (facades,
plus ground nobody can stand on) need a standing node with a clear,
well-angled line of sight; each gets the highest-scoring acceptable
node.  Walkable incomplete ground is credited by arrival: stepping onto
the region covers it, so its view is the region itself.

A view's score favors head-on, close-up looks.  The acceptance test
requires the sight line to stay clear of other supervoxel boxes, the
incidence against the target normal to stay under the facade angle,
and the elevation to sit inside the sensor's vertical field of view.

Views are then labeled by which species can execute them (observation
level and standing-node requirement both bind) and chained into
clusters of nearby views per label.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import LABEL_ANY, PlannerParams, RobotSpecies
from .supervoxels import KIND_FACADE, FusedSupervoxel, key_sort_value
from .topology import TopologyGraph

log = logging.getLogger(__name__)

VIEW_REMOTE = 0
VIEW_ARRIVAL = 1


@dataclass(frozen=True)
class View:
    node_key: int                    # standing node in the topology graph
    eye: tuple[float, float, float]  # sensor position when executing
    primary: int                     # supervoxel that spawned this view
    targets: tuple[int, ...]         # everything credited on execution
    score: float
    min_obs_level: int               # species need at least this level
    mode: int                        # VIEW_REMOTE or VIEW_ARRIVAL


@dataclass
class ViewCluster:
    label: str                       # species name, or "any"
    views: tuple[View, ...]
    center: np.ndarray               # mean standing position
    anchor_key: int                  # graph node closest to the center

    @property
    def size(self) -> int:
        return len(self.views)


class OccupancyIndex:
    """Dense lattice of supervoxel ownership for line-of-sight tests.

    Each supervoxel claims the cells its box (center +- half a seed
    interval) overlaps; the smallest key wins contested cells.
    """

    def __init__(self, table: dict[int, FusedSupervoxel], pitch: float):
        self.pitch = pitch
        if not table:
            self.origin = np.zeros(3, dtype=np.int64)
            self.grid = np.full((1, 1, 1), -1, dtype=np.int64)
            return
        centers = np.array([sv.center for sv in table.values()])
        lo = np.floor((centers.min(axis=0) - pitch) / pitch).astype(np.int64)
        hi = np.floor((centers.max(axis=0) + pitch) / pitch).astype(np.int64)
        self.origin = lo
        shape = tuple((hi - lo + 1).tolist())
        self.grid = np.full(shape, -1, dtype=np.int64)
        half = pitch / 2.0
        # visit keys in descending order so smaller keys overwrite
        items = sorted(table.items(), key=lambda kv: key_sort_value(kv[0]), reverse=True)
        for key, sv in items:
            c = np.asarray(sv.center)
            lo_c = np.floor((c - half) / pitch).astype(np.int64) - lo
            hi_c = np.floor((c + half) / pitch).astype(np.int64) - lo
            lo_c = np.clip(lo_c, 0, np.array(shape) - 1)
            hi_c = np.clip(hi_c, 0, np.array(shape) - 1)
            self.grid[
                lo_c[0] : hi_c[0] + 1, lo_c[1] : hi_c[1] + 1, lo_c[2] : hi_c[2] + 1
            ] = key

    def owners(self, points: np.ndarray) -> np.ndarray:
        """Supervoxel key at each point, -1 where empty or outside."""
        cells = np.floor(points / self.pitch).astype(np.int64) - self.origin
        shape = np.array(self.grid.shape)
        ok = np.all((cells >= 0) & (cells < shape), axis=-1)
        flat = np.where(ok.reshape(-1))[0]
        out = np.full(points.shape[:-1], -1, dtype=np.int64).reshape(-1)
        cc = cells.reshape(-1, 3)[flat]
        out[flat] = self.grid[cc[:, 0], cc[:, 1], cc[:, 2]]
        return out.reshape(points.shape[:-1])


def rays_clear(
    occ: OccupancyIndex,
    eyes: np.ndarray,
    targets: np.ndarray,
    target_keys: np.ndarray,
    standing_keys: np.ndarray,
    step: float,
) -> np.ndarray:
    """Vectorized occlusion test for paired eye/target rows.

    A ray is blocked when it passes a cell owned by a supervoxel other
    than its own target or the eye's standing region.
    """
    n = len(eyes)
    if n == 0:
        return np.zeros(0, dtype=bool)
    diff = targets - eyes
    dist = np.linalg.norm(diff, axis=1)
    top = float(dist.max())
    steps = int(np.ceil(top / step)) if top > 0 else 0
    if steps <= 1:
        return np.ones(n, dtype=bool)
    t = (np.arange(1, steps) * step)[None, :]          # (1, S)
    live = t < dist[:, None] - step * 0.5              # stop short of the target
    dirs = diff / np.maximum(dist[:, None], 1e-12)
    pts = eyes[:, None, :] + dirs[:, None, :] * t[:, :, None]
    owner = occ.owners(pts)                            # (n, S)
    blocking = (
        live
        & (owner != -1)
        & (owner != target_keys[:, None])
        & (owner != standing_keys[:, None])
    )
    return ~blocking.any(axis=1)


def acceptance_geometry(
    eyes: np.ndarray,
    targets: np.ndarray,
    normals: np.ndarray,
    params: PlannerParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-row (passes, incidence_rad, elevation_deg, distance).

    Rows pair one eye with one target.  Incidence is measured between
    the target normal and the reversed sight line; elevation is the
    signed vertical angle of the sight line at the eye.  Rows whose
    normal is NaN skip the incidence test.
    """
    diff = targets - eyes
    dist = np.linalg.norm(diff, axis=1)
    ok_dist = dist > 1e-9
    m_hat = diff / np.maximum(dist[:, None], 1e-12)
    elevation = np.degrees(np.arcsin(np.clip(m_hat[:, 2], -1.0, 1.0)))
    have_n = np.isfinite(normals[:, 0])
    cos_inc = np.clip(-np.einsum("ij,ij->i", m_hat, np.nan_to_num(normals)), -1.0, 1.0)
    incidence = np.where(have_n, np.arccos(cos_inc), 0.0)
    passes = (
        ok_dist
        & (np.degrees(incidence) < params.facade_slope_deg)
        & (elevation >= params.fov_min_deg)
        & (elevation <= params.fov_max_deg)
    )
    return passes, incidence, elevation, dist


def vis_score(incidence_rad, dist, params: PlannerParams):
    denom = params.score_angle_weight * incidence_rad + params.score_distance_weight * dist
    return 1.0 / np.maximum(denom, 1e-9)


def _min_obs_level(dist: float, species: Sequence[RobotSpecies]) -> Optional[int]:
    levels = [sp.observation_level for sp in species if dist < sp.view_range]
    return min(levels) if levels else None


def _capable(min_obs_level: int, node_requirement: int,
             species: Sequence[RobotSpecies]) -> list[str]:
    return [
        sp.name
        for sp in species
        if sp.observation_level >= min_obs_level
        and node_requirement <= sp.traversal_level
    ]


@dataclass
class ViewPlan:
    views: list[View]
    unviewable: list[int]      # incomplete keys with no acceptable view
    infeasible_views: int      # views no species could execute


def plan_views(
    table: dict[int, FusedSupervoxel],
    graph: TopologyGraph,
    params: PlannerParams,
    species: Sequence[RobotSpecies],
    eye_height: float = 1.0,
) -> ViewPlan:
    incomplete = {k: sv for k, sv in table.items() if not sv.covered}
    node_set = set(graph.keys)
    remote = {
        k: sv
        for k, sv in incomplete.items()
        if sv.kind == KIND_FACADE or k not in node_set
    }
    arrival = {k: sv for k, sv in incomplete.items() if k not in remote}

    views: list[View] = []
    unviewable: list[int] = []
    infeasible = 0
    covered_by_footprint: set[int] = set()
    step = params.seed_interval / 2.0

    if graph.keys and (remote or arrival):
        eyes = graph.centers + np.array([0.0, 0.0, eye_height])[None, :]
        standing = np.array(graph.keys, dtype=np.int64)
        node_req = graph.requirements
        occ = OccupancyIndex(table, params.seed_interval)
        max_range = max(sp.view_range for sp in species)

        a_keys = np.array(sorted(arrival, key=key_sort_value), dtype=np.int64)
        a_centers = (
            np.array([arrival[int(k)].center for k in a_keys]).reshape(-1, 3)
            if len(a_keys)
            else np.zeros((0, 3))
        )
        a_normals = np.full((len(a_keys), 3), np.nan)
        for i, k in enumerate(a_keys):
            nrm = arrival[int(k)].normal
            if nrm is not None:
                a_normals[i] = nrm

        for tkey in sorted(remote, key=key_sort_value):
            sv = remote[tkey]
            target = np.asarray(sv.center, dtype=float)
            nrm = np.full((len(eyes), 3), np.nan)
            if sv.normal is not None:
                nrm[:] = sv.normal
            passes, inc, _, dist = acceptance_geometry(
                eyes, np.broadcast_to(target, eyes.shape), nrm, params
            )
            passes = passes & (dist < max_range)
            if not passes.any():
                unviewable.append(tkey)
                continue
            cand = np.nonzero(passes)[0]
            order = cand[np.argsort(-vis_score(inc[cand], dist[cand], params))]
            order = order[:12]  # a clear best usually shows early
            clear = rays_clear(
                occ,
                eyes[order],
                np.broadcast_to(target, (len(order), 3)),
                np.full(len(order), tkey, dtype=np.int64),
                standing[order],
                step,
            )
            hit = np.nonzero(clear)[0]
            if len(hit) == 0:
                unviewable.append(tkey)
                continue
            chosen = int(order[hit[0]])
            d = float(dist[chosen])
            lvl = _min_obs_level(d, species)
            if lvl is None:
                unviewable.append(tkey)
                continue
            if not _capable(lvl, int(node_req[chosen]), species):
                infeasible += 1
                unviewable.append(tkey)
                continue
            extra: tuple[int, ...] = ()
            # arriving at the standing node covers it as a side effect
            if int(standing[chosen]) in arrival:
                extra = (int(standing[chosen]),)
            if len(a_keys):
                coverage = min(
                    sp.coverage_range
                    for sp in species
                    if sp.observation_level >= lvl
                )
                eye_rows = np.broadcast_to(eyes[chosen], a_centers.shape)
                g_pass, _, _, g_dist = acceptance_geometry(
                    eye_rows, a_centers, a_normals, params
                )
                g_pass = g_pass & (g_dist < coverage)
                gi = np.nonzero(g_pass)[0]
                if len(gi):
                    g_clear = rays_clear(
                        occ,
                        eye_rows[gi],
                        a_centers[gi],
                        a_keys[gi],
                        np.full(len(gi), standing[chosen], dtype=np.int64),
                        step,
                    )
                    seen = tuple(
                        int(k) for k in a_keys[gi[g_clear]] if int(k) not in extra
                    )
                    extra = extra + seen
            views.append(
                View(
                    node_key=int(standing[chosen]),
                    eye=tuple(eyes[chosen].tolist()),
                    primary=tkey,
                    targets=(tkey, *extra),
                    score=float(
                        vis_score(
                            inc[chosen : chosen + 1], dist[chosen : chosen + 1], params
                        )[0]
                    ),
                    min_obs_level=lvl,
                    mode=VIEW_REMOTE,
                )
            )
            covered_by_footprint.update(extra)

    # arrival views for walkable incomplete ground nobody looked at
    for gkey in sorted(arrival, key=key_sort_value):
        if gkey in covered_by_footprint:
            continue
        idx = graph.index.get(gkey)
        if idx is None:
            unviewable.append(gkey)
            continue
        if not _capable(1, int(graph.requirements[idx]), species):
            infeasible += 1
            unviewable.append(gkey)
            continue
        eye = graph.centers[idx] + np.array([0.0, 0.0, eye_height])
        views.append(
            View(
                node_key=gkey,
                eye=tuple(eye.tolist()),
                primary=gkey,
                targets=(gkey,),
                score=1.0 / max(params.score_distance_weight * step, 1e-9),
                min_obs_level=1,
                mode=VIEW_ARRIVAL,
            )
        )

    if unviewable:
        log.debug("%d incomplete regions have no acceptable view", len(unviewable))
    return ViewPlan(views=views, unviewable=unviewable, infeasible_views=infeasible)


def label_views(
    views: Iterable[View],
    graph: TopologyGraph,
    species: Sequence[RobotSpecies],
) -> dict[str, list[View]]:
    """Group views by who may execute them; cheapest species on ties."""
    groups: dict[str, list[View]] = {}
    for v in views:
        idx = graph.index.get(v.node_key)
        req = int(graph.requirements[idx]) if idx is not None else 255
        names = _capable(v.min_obs_level, req, species)
        if not names:
            continue
        if len(names) == len(species):
            label = LABEL_ANY
        elif len(names) == 1:
            label = names[0]
        else:
            by_name = {sp.name: sp for sp in species}
            label = min(
                names,
                key=lambda nm: 10.0 * by_name[nm].traversal_level
                + 1.0 * by_name[nm].observation_level,
            )
        groups.setdefault(label, []).append(v)
    return groups


def cluster_views(
    views: Sequence[View],
    graph: TopologyGraph,
    params: PlannerParams,
    species: Sequence[RobotSpecies],
) -> list[ViewCluster]:
    """Chain nearby views into clusters, one label at a time.

    Views are taken in (standing cell, target cell) order; a cluster
    absorbs every remaining view within the chain radius of any member
    and repeats until nothing else is close enough.
    """
    clusters: list[ViewCluster] = []
    groups = label_views(views, graph, species)
    for label in sorted(groups):
        pending = sorted(
            groups[label],
            key=lambda v: (key_sort_value(v.node_key), key_sort_value(v.primary)),
        )
        while pending:
            members = [pending.pop(0)]
            anchors = np.array([members[0].eye])
            grew = True
            while grew and pending:
                grew = False
                keep = []
                for v in pending:
                    p = np.array(v.eye)
                    if np.min(
                        np.linalg.norm(anchors[:, :2] - p[None, :2], axis=1)
                    ) <= params.cluster_radius:
                        members.append(v)
                        anchors = np.vstack([anchors, p[None, :]])
                        grew = True
                    else:
                        keep.append(v)
                pending = keep
            center = anchors.mean(axis=0)
            clusters.append(
                ViewCluster(
                    label=label,
                    views=tuple(members),
                    center=center,
                    anchor_key=graph.nearest_node(center),
                )
            )
    return clusters
