"""Per-cluster execution tours: fewest standpoints, then a short walk.

A cluster arrives as a bag of views, one per region that needs
attention.  Standing at one spot often satisfies several of them, so
the planner first searches for a small set of standpoints that still
covers every target, then orders the survivors as an open path wedged
between the previous and the next cluster.

Candidate standpoints are the original view positions plus every
traversable graph node near the cluster center.  Selection is greedy
by total score over uncovered targets, followed by a redundancy prune
and a pass that replaces pairs of standpoints with single substitutes
while any such swap exists.  All tie-breaks are ordinal, so the result
is deterministic for a given input order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import LABEL_ANY, PlannerParams, RobotSpecies
from .supervoxels import FusedSupervoxel, key_sort_value
from .topology import TopologyGraph
from .views import (
    OccupancyIndex,
    View,
    ViewCluster,
    acceptance_geometry,
    rays_clear,
    vis_score,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Standpoint:
    node_key: int
    eye: tuple[float, float, float]
    targets: tuple[int, ...]


@dataclass
class ClusterTour:
    label: str
    anchor_key: int
    center: np.ndarray
    stands: tuple[Standpoint, ...]       # visit order
    uncoverable: tuple[int, ...]         # targets no candidate reaches


def _label_caps(
    label: str, species: Sequence[RobotSpecies]
) -> tuple[float, float, int]:
    """Ranges and traversal level every eligible executor satisfies."""
    pool = [sp for sp in species if label == LABEL_ANY or sp.name == label]
    if not pool:
        pool = list(species)
    return (
        min(sp.view_range for sp in pool),
        min(sp.coverage_range for sp in pool),
        min(sp.traversal_level for sp in pool),
    )


def _target_rows(
    table: dict[int, FusedSupervoxel], targets: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    centers = np.zeros((len(targets), 3))
    normals = np.full((len(targets), 3), np.nan)
    for i, key in enumerate(targets):
        sv = table[key]
        centers[i] = sv.center
        if sv.normal is not None:
            normals[i] = sv.normal
    return centers, normals


def _candidate_scores(
    cluster: ViewCluster,
    table: dict[int, FusedSupervoxel],
    graph: TopologyGraph,
    occ: OccupancyIndex,
    params: PlannerParams,
    species: Sequence[RobotSpecies],
    eye_height: float,
    augment: bool,
) -> tuple[list[tuple[int, tuple[float, float, float]]], list[int], np.ndarray]:
    """Candidates, target list, and the candidate x target score matrix."""
    targets = sorted(
        {t for v in cluster.views for t in v.targets}, key=key_sort_value
    )
    t_index = {t: i for i, t in enumerate(targets)}
    t_centers, t_normals = _target_rows(table, targets)
    walkable = np.array([t in graph.index for t in targets])
    arrival_score = 1.0 / max(
        params.score_distance_weight * params.seed_interval / 2.0, 1e-9
    )
    view_range, coverage_range, trav_cap = _label_caps(cluster.label, species)
    step = params.seed_interval / 2.0

    candidates: list[tuple[int, tuple[float, float, float]]] = []
    rows: list[np.ndarray] = []

    # original views keep their recorded coverage
    for v in cluster.views:
        row = np.zeros(len(targets))
        own = [t for t in v.targets if t == v.node_key]
        geo = [t for t in v.targets if t != v.node_key]
        if geo:
            cols = np.array([t_index[t] for t in geo])
            eye_rows = np.broadcast_to(np.array(v.eye), (len(cols), 3))
            _, inc, _, dist = acceptance_geometry(
                eye_rows, t_centers[cols], t_normals[cols], params
            )
            row[cols] = vis_score(inc, dist, params)
        for t in own:
            row[t_index[t]] = arrival_score
        candidates.append((v.node_key, v.eye))
        rows.append(row)

    if augment and graph.keys:
        d_center = np.linalg.norm(
            graph.centers - np.asarray(cluster.center)[None, :], axis=1
        )
        near = (d_center <= params.cluster_radius) & (
            graph.requirements <= trav_cap
        )
        order = np.argsort(d_center, kind="stable")
        lift = np.array([0.0, 0.0, eye_height])
        for idx in order:
            if not near[idx]:
                continue
            key = graph.keys[int(idx)]
            eye = graph.centers[idx] + lift
            row = np.zeros(len(targets))
            eye_rows = np.broadcast_to(eye, t_centers.shape)
            passes, inc, _, dist = acceptance_geometry(
                eye_rows, t_centers, t_normals, params
            )
            limit = np.where(walkable, coverage_range, view_range)
            mask = passes & (dist < limit)
            own_col = t_index.get(key)
            if own_col is not None:
                mask[own_col] = False        # arrival handles it below
            cols = np.nonzero(mask)[0]
            if len(cols):
                clear = rays_clear(
                    occ,
                    np.broadcast_to(eye, (len(cols), 3)).astype(float),
                    t_centers[cols],
                    np.array([targets[c] for c in cols], dtype=np.int64),
                    np.full(len(cols), key, dtype=np.int64),
                    step,
                )
                good = cols[clear]
                row[good] = vis_score(inc[good], dist[good], params)
            if own_col is not None:
                row[own_col] = arrival_score
            if row.any():
                candidates.append((key, tuple(eye.tolist())))
                rows.append(row)

    score = np.array(rows) if rows else np.zeros((0, len(targets)))
    return candidates, targets, score


def minimal_cover(score: np.ndarray) -> tuple[list[int], list[int]]:
    """Small set of rows covering every coverable column.

    Greedy pick by summed score over uncovered columns, then drop
    redundant rows weakest-first, then replace any two rows by one
    outsider while possible.  Returns (selected rows, uncoverable
    columns).
    """
    n_cand, n_targets = score.shape
    covers = score > 0
    coverable = covers.any(axis=0)
    uncoverable = [int(t) for t in np.nonzero(~coverable)[0]]

    # a row that alone covers some column belongs to every cover; on
    # open ground that is nearly all of them, so handle these outside
    # the optimization loops
    forced = (
        covers[:, coverable & (covers.sum(axis=0) == 1)].any(axis=1)
        if coverable.any()
        else np.zeros(n_cand, dtype=bool)
    )
    chosen = forced.copy()
    selected = [int(r) for r in np.nonzero(forced)[0]]
    need = coverable & ~covers[forced].any(axis=0)
    while need.any():
        gain = (score * need[None, :]).sum(axis=1)
        gain[chosen] = -1.0
        pick = int(np.argmax(gain))
        if gain[pick] <= 0:
            break
        chosen[pick] = True
        selected.append(pick)
        need &= ~covers[pick]

    # weakest-first prune; forced rows can never be redundant
    kept = set(selected)
    counts = covers[sorted(kept)].sum(axis=0)
    for cand in sorted(selected, key=lambda r: (score[r].sum(), r)):
        if forced[cand]:
            continue
        critical = covers[cand] & coverable & (counts == 1)
        if not critical.any():
            kept.discard(cand)
            counts = counts - covers[cand]

    # pairwise contraction: two replaceable rows out, one row in
    selected = sorted(kept)
    improved = True
    while improved and len(selected) >= 2:
        improved = False
        soft = [r for r in selected if not forced[r]]
        if len(soft) < 2:
            break
        outside = np.array(
            [r for r in range(n_cand) if r not in kept], dtype=np.intp
        )
        if len(outside) == 0:
            break
        counts = covers[selected].sum(axis=0)
        for i in range(len(soft)):
            for j in range(i + 1, len(soft)):
                ra, rb = soft[i], soft[j]
                deficit = coverable & (counts - covers[ra] - covers[rb] == 0)
                ok = covers[outside][:, deficit].all(axis=1)
                hit = np.nonzero(ok)[0]
                if len(hit):
                    kept.discard(ra)
                    kept.discard(rb)
                    kept.add(int(outside[hit[0]]))
                    selected = sorted(kept)
                    improved = True
                    break
            if improved:
                break
    return sorted(kept), uncoverable


def order_stand_keys(
    keys: list[int],
    graph: TopologyGraph,
    species: int | str,
    entry_key: Optional[int],
    exit_key: Optional[int],
) -> list[int]:
    """Open-path order between fixed endpoints: nearest insertion, 2-opt."""
    if len(keys) <= 1:
        return list(keys)
    s = species if isinstance(species, int) else graph.species_index(species)

    # distances via one gather from the all-pairs table; rows/cols are
    # the stands plus the two endpoints
    pool = list(keys)
    entry_col = exit_col = None
    if entry_key is not None:
        entry_col = len(pool)
        pool.append(entry_key)
    if exit_key is not None:
        exit_col = len(pool)
        pool.append(exit_key)
    rows = np.array([graph.index[k] for k in pool], dtype=np.intp)
    dmat = graph.dist[s][np.ix_(rows, rows)]

    def d(a: Optional[int], b: Optional[int]) -> float:
        if a is None or b is None:
            return 0.0
        return float(dmat[a, b])

    remaining = list(range(len(keys)))
    seq: list[int] = []
    cur = entry_col
    while remaining:
        if cur is None:
            best = 0
        else:
            # ties fall to the smallest pool position, like the scalar loop
            best = int(np.argmin(dmat[cur, remaining]))
        pick = remaining.pop(best)
        seq.append(pick)
        cur = pick

    if len(seq) <= 80:
        # quadratic polish pays off on small walks
        def leg(a: int, b: int) -> float:
            return d(seq[a] if a >= 0 else entry_col,
                     seq[b] if b < len(seq) else exit_col)

        for _ in range(50):
            changed = False
            for i in range(len(seq) - 1):
                for j in range(i + 1, len(seq)):
                    before = leg(i - 1, i) + leg(j, j + 1)
                    after = leg(i - 1, j) + leg(i, j + 1)
                    # reversal keeps interior legs; endpoints decide
                    if after < before - 1e-12:
                        seq[i : j + 1] = reversed(seq[i : j + 1])
                        changed = True
            if not changed:
                break
    else:
        seq = _banded_two_opt(seq, dmat, entry_col, exit_col)
    return [keys[i] for i in seq]


def _banded_two_opt(
    seq: list[int],
    dmat: np.ndarray,
    entry_col: Optional[int],
    exit_col: Optional[int],
    band: int = 30,
    max_moves: int = 200,
) -> list[int]:
    """Best-move 2-opt limited to short reversals, fully vectorized.

    A nearest-neighbor order over a coverage carpet only leaves local
    crossings, so restricting reversals to a window keeps the win and
    drops the cost from O(n^2) python to O(n*band) numpy per move.
    """
    order = np.asarray(seq, dtype=np.intp)
    n = len(order)
    zero_row = dmat.shape[0]
    # pad the matrix with a zero row/column standing in for open ends
    pad = np.zeros((zero_row + 1, zero_row + 1))
    pad[:zero_row, :zero_row] = dmat
    e = entry_col if entry_col is not None else zero_row
    x = exit_col if exit_col is not None else zero_row
    offsets = np.arange(1, band + 1)
    for _ in range(max_moves):
        prev = np.concatenate(([e], order[:-1]))      # before i
        nxt = np.concatenate((order[1:], [x]))        # after j
        i_idx = np.arange(n)
        j_idx = i_idx[:, None] + offsets[None, :]     # (n, band)
        valid = j_idx < n
        j_clip = np.minimum(j_idx, n - 1)
        gain = (
            pad[prev[i_idx][:, None], order[j_clip]]
            + pad[order[i_idx][:, None], nxt[j_clip]]
            - pad[prev[i_idx][:, None], order[i_idx][:, None]]
            - pad[order[j_clip], nxt[j_clip]]
        )
        gain[~valid] = np.inf
        np.nan_to_num(gain, copy=False, nan=np.inf)  # inf-inf legs are no moves
        flat = int(np.argmin(gain))
        i, k = divmod(flat, band)
        if gain[i, k] >= -1e-12:
            break
        j = i + 1 + k
        order[i : j + 1] = order[i : j + 1][::-1]
    return [int(v) for v in order]


def plan_cluster_tour(
    cluster: ViewCluster,
    table: dict[int, FusedSupervoxel],
    graph: TopologyGraph,
    occ: OccupancyIndex,
    params: PlannerParams,
    species: Sequence[RobotSpecies],
    entry_key: Optional[int],
    exit_key: Optional[int],
    eye_height: float = 1.0,
    minimize: bool = True,
    order_species: Optional[int | str] = None,
) -> ClusterTour:
    """Reduce one cluster to an ordered list of standpoints.

    `order_species` picks whose distances order the walk, normally the
    executing robot's; unset, the weakest eligible executor is used.
    With `minimize` off, every distinct original standpoint is kept
    (deduplicated by node) and only the ordering runs.
    """
    if not cluster.views:
        return ClusterTour(cluster.label, cluster.anchor_key, cluster.center, (), ())

    if minimize:
        candidates, targets, score = _candidate_scores(
            cluster, table, graph, occ, params, species, eye_height, augment=True
        )
        rows, bad_cols = minimal_cover(score)
        uncoverable = tuple(targets[c] for c in bad_cols)
        # an original view and an augmented candidate may share a node
        merged: dict[int, Standpoint] = {}
        for r in rows:
            key, eye = candidates[r]
            hit = tuple(targets[c] for c in np.nonzero(score[r] > 0)[0])
            prev = merged.get(key)
            if prev is not None:
                hit = prev.targets + tuple(t for t in hit if t not in prev.targets)
                eye = prev.eye
            merged[key] = Standpoint(node_key=key, eye=eye, targets=hit)
        stands = list(merged.values())
    else:
        by_node: dict[int, list[View]] = {}
        for v in cluster.views:
            by_node.setdefault(v.node_key, []).append(v)
        stands = [
            Standpoint(
                node_key=key,
                eye=group[0].eye,
                targets=tuple(
                    dict.fromkeys(t for v in group for t in v.targets)
                ),
            )
            for key, group in sorted(
                by_node.items(), key=lambda kv: key_sort_value(kv[0])
            )
        ]
        uncoverable = ()

    if order_species is None:
        if cluster.label != LABEL_ANY:
            order_species = cluster.label
        else:
            order_species = min(
                range(len(species)), key=lambda i: species[i].traversal_level
            )
    keys = [sp.node_key for sp in stands]
    by_key = {sp.node_key: sp for sp in stands}
    ordered = order_stand_keys(keys, graph, order_species, entry_key, exit_key)
    return ClusterTour(
        label=cluster.label,
        anchor_key=cluster.anchor_key,
        center=cluster.center,
        stands=tuple(by_key[k] for k in ordered),
        uncoverable=uncoverable,
    )


def tour_length(
    stands: Sequence[Standpoint],
    graph: TopologyGraph,
    species: int | str,
    start_key: Optional[int],
) -> float:
    """Graph length of the walk start -> each standpoint in order."""
    total = 0.0
    cur = start_key
    for sp in stands:
        if cur is not None:
            total += graph.distance(cur, sp.node_key, species)
        cur = sp.node_key
    return total
