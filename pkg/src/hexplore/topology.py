"""Traversability graph over ground supervoxels.

Nodes are ground-kind supervoxels at least one species can stand on,
ordered by key.  Edges connect regions whose member voxels touch
(26-adjacency), weighted by Euclidean center distance.  Each species
gets its own all-pairs closure in which nodes above its traversal level
are unreachable.

`all_pairs_shortest` is a straight Floyd-Warshall with predecessor
tracking.  The store wrapping it repairs the closure incrementally when
only a few nodes changed: exact rows for changed nodes come from a
Dijkstra sweep on the new graph, then one pivot pass over the changed
nodes fixes every old pair (any improved path must route through a
changed node, whose row is already exact).  Node or edge removals and
weight growth invalidate that argument and force a full rebuild.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _dijkstra

from .config import RobotSpecies
from .supervoxels import FusedSupervoxel, KIND_GROUND, key_sort_value

_FULL_REBUILD_FRACTION = 0.05
_FW_MAX_NODES = 300          # above this, full rebuilds use the Dijkstra sweep
_OBSTACLE_PENALTY = 100.0


class StaleEpochError(RuntimeError):
    """Raised when a query arrives with an outdated graph epoch."""


def all_pairs_shortest(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Floyd-Warshall closure with predecessors.

    `weights` is (N, N) or (K, N, N) with inf for missing edges; the
    diagonal is forced to zero.  Returns (dist, pred); pred[i, j] is the
    node before j on the best i->j route, -1 when absent.
    """
    w = np.asarray(weights, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None, :, :]
    k, n, _ = w.shape
    dist = w.copy()
    pred = np.full((k, n, n), -1, dtype=np.int32)
    for s in range(k):
        np.fill_diagonal(dist[s], 0.0)
        src, dst = np.nonzero(np.isfinite(dist[s]) & ~np.eye(n, dtype=bool))
        pred[s, src, dst] = src
        d = dist[s]
        p = pred[s]
        for m in range(n):
            alt = d[:, m : m + 1] + d[m : m + 1, :]
            better = alt < d
            if better.any():
                d[better] = alt[better]
                p[better] = np.broadcast_to(p[m], (n, n))[better]
        np.fill_diagonal(p, -1)
    if single:
        return dist[0], pred[0]
    return dist, pred


@dataclass
class TopologyGraph:
    """Immutable routing snapshot for one map epoch."""

    epoch: int
    keys: list[int]                      # sorted node keys
    index: dict[int, int]
    centers: np.ndarray                  # (N, 3)
    normals: np.ndarray                  # (N, 3), up vector when unknown
    requirements: np.ndarray             # (N,)
    species: tuple[RobotSpecies, ...]
    weights: np.ndarray                  # (K, N, N) capability-masked edges
    dist: np.ndarray                     # (K, N, N)
    pred: np.ndarray                     # (K, N, N)
    adjacency: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def ensure_epoch(self, expected: int) -> None:
        if expected != self.epoch:
            raise StaleEpochError(
                f"graph rebuilt (epoch {self.epoch}, caller saw {expected})"
            )

    def species_index(self, name: str) -> int:
        for i, sp in enumerate(self.species):
            if sp.name == name:
                return i
        raise KeyError(name)

    def has_node(self, key: int) -> bool:
        return key in self.index

    def distance(self, key_a: int, key_b: int, species: int | str) -> float:
        if not self.keys:
            return float("inf")
        s = species if isinstance(species, int) else self.species_index(species)
        ia, ib = self.index.get(key_a), self.index.get(key_b)
        if ia is None or ib is None:
            return float("inf")
        return float(self.dist[s, ia, ib])

    def path(self, key_a: int, key_b: int, species: int | str) -> list[int]:
        s = species if isinstance(species, int) else self.species_index(species)
        ia, ib = self.index.get(key_a), self.index.get(key_b)
        if ia is None or ib is None or not np.isfinite(self.dist[s, ia, ib]):
            return []
        if ia == ib:
            return [key_a]
        chain = [ib]
        cur = ib
        while cur != ia:
            cur = int(self.pred[s, ia, cur])
            if cur < 0:
                return []
            chain.append(cur)
        return [self.keys[i] for i in reversed(chain)]

    def nearest_node(self, point: np.ndarray) -> Optional[int]:
        """Closest node center; coordinate order breaks exact ties."""
        if not self.keys:
            return None
        d2 = np.sum((self.centers - np.asarray(point)[None, :]) ** 2, axis=1)
        cells = np.array([key_sort_value(k) for k in self.keys])
        order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0], d2))
        return self.keys[int(order[0])]

    def route_avoiding(
        self,
        key_a: int,
        key_b: int,
        species: int | str,
        boxes: Sequence[np.ndarray],
    ) -> list[int]:
        """Shortest path with edges into boxed nodes scaled way up.

        Obstacle boxes are (2, 3) min/max corners; nodes inside any box
        keep their edges but at a prohibitive weight, so the route only
        crosses them when there is no way around.
        """
        s = species if isinstance(species, int) else self.species_index(species)
        ia, ib = self.index.get(key_a), self.index.get(key_b)
        if ia is None or ib is None:
            return []
        w = self.weights[s].copy()
        inside = np.zeros(len(self.keys), dtype=bool)
        for box in boxes:
            inside |= np.all(
                (self.centers >= box[0][None, :]) & (self.centers <= box[1][None, :]),
                axis=1,
            )
        if inside.any():
            w[inside, :] *= _OBSTACLE_PENALTY
            w[:, inside] *= _OBSTACLE_PENALTY
        graph = csr_matrix(np.where(np.isfinite(w), w, 0.0))
        dist, pred = _dijkstra(
            graph, directed=False, indices=ia, return_predecessors=True
        )
        if not np.isfinite(dist[ib]):
            return []
        chain = [ib]
        cur = ib
        while cur != ia:
            cur = int(pred[cur])
            if cur < 0:
                return []
            chain.append(cur)
        return [self.keys[i] for i in reversed(chain)]


def _species_weights(
    base: np.ndarray, requirements: np.ndarray, species: Sequence[RobotSpecies]
) -> np.ndarray:
    k = len(species)
    n = len(requirements)
    w = np.broadcast_to(base, (k, n, n)).copy()
    for s, sp in enumerate(species):
        blocked = requirements > sp.traversal_level
        w[s, blocked, :] = np.inf
        w[s, :, blocked] = np.inf
    return w


def _sparse_per_species(
    weights: np.ndarray,
) -> list[csr_matrix]:
    out = []
    for s in range(weights.shape[0]):
        w = weights[s]
        out.append(csr_matrix(np.where(np.isfinite(w), w, 0.0)))
    return out


class TopologyStore:
    """Owns the current graph and keeps its closure up to date."""

    def __init__(self, species: tuple[RobotSpecies, ...]):
        self.species = species
        self.graph: Optional[TopologyGraph] = None
        self._epoch = 0
        self.full_rebuilds = 0
        self.incremental_repairs = 0

    def rebuild(
        self,
        table: dict[int, FusedSupervoxel],
        edge_pairs: Iterable[tuple[int, int]],
    ) -> TopologyGraph:
        max_level = max(sp.traversal_level for sp in self.species)
        nodes = {
            k: sv
            for k, sv in table.items()
            if sv.kind == KIND_GROUND and sv.requirement <= max_level
        }
        keys = sorted(nodes, key=key_sort_value)
        index = {k: i for i, k in enumerate(keys)}
        n = len(keys)
        centers = np.array([nodes[k].center for k in keys]).reshape(n, 3)
        normals = np.array(
            [
                nodes[k].normal if nodes[k].normal is not None else (0.0, 0.0, 1.0)
                for k in keys
            ]
        ).reshape(n, 3)
        reqs = np.array([nodes[k].requirement for k in keys], dtype=np.int32)
        base = np.full((n, n), np.inf)
        np.fill_diagonal(base, 0.0)
        adjacency: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n)}
        for ka, kb in edge_pairs:
            ia, ib = index.get(ka), index.get(kb)
            if ia is None or ib is None:
                continue
            wgt = float(np.linalg.norm(centers[ia] - centers[ib]))
            base[ia, ib] = base[ib, ia] = wgt
            adjacency[ia].append((ib, wgt))
            adjacency[ib].append((ia, wgt))
        weights = _species_weights(base, reqs, self.species)

        self._epoch += 1
        old = self.graph
        changed = self._diff(old, keys, index, centers, reqs, base)
        if changed is None or old is None:
            dist, pred = self._full_closure(weights)
            self.full_rebuilds += 1
        else:
            dist, pred = self._repair(old, keys, index, weights, changed, adjacency)
            self.incremental_repairs += 1
        self.graph = TopologyGraph(
            epoch=self._epoch,
            keys=keys,
            index=index,
            centers=centers,
            normals=normals,
            requirements=reqs,
            species=self.species,
            weights=weights,
            dist=dist,
            pred=pred,
            adjacency=adjacency,
        )
        return self.graph

    def _diff(self, old, keys, index, centers, reqs, base):
        """Changed node indices, or None when only a full rebuild is safe."""
        if old is None:
            return None
        old_keys = set(old.index)
        if old_keys - set(index):
            return None  # removed nodes
        changed: set[int] = set()
        for k, i in index.items():
            j = old.index.get(k)
            if j is None:
                changed.add(i)
                continue
            if old.requirements[j] < reqs[i]:
                return None  # capability shrank: edges may have vanished
            if old.requirements[j] > reqs[i]:
                changed.add(i)
            if not np.array_equal(old.centers[j], centers[i]):
                changed.add(i)
        # compare edges on the common block
        old_pairs = {}
        for ka, ia_old in old.index.items():
            for ib_old, w in old.adjacency[ia_old]:
                kb = old.keys[ib_old]
                old_pairs[(min(ka, kb), max(ka, kb))] = w
        new_pairs = {}
        for ka, ia in index.items():
            finite = np.isfinite(base[ia])
            for ib in np.nonzero(finite)[0]:
                if ib == ia:
                    continue
                kb = keys[ib]
                new_pairs[(min(ka, kb), max(ka, kb))] = base[ia, ib]
        for pair, w in old_pairs.items():
            w_new = new_pairs.get(pair)
            if w_new is None or w_new > w + 1e-12:
                return None  # removed or grown edge
            if w_new < w - 1e-12:
                changed.add(index[pair[0]])
                changed.add(index[pair[1]])
        for pair in new_pairs:
            if pair not in old_pairs:
                changed.add(index[pair[0]])
                changed.add(index[pair[1]])
        if not changed:
            return set()
        if len(changed) >= _FULL_REBUILD_FRACTION * max(len(keys), 1):
            return None
        return changed

    def _full_closure(self, weights):
        k, n, _ = weights.shape
        if n <= _FW_MAX_NODES:
            return all_pairs_shortest(weights)
        dist = np.empty_like(weights)
        pred = np.empty((k, n, n), dtype=np.int32)
        for s, graph in enumerate(_sparse_per_species(weights)):
            d, p = _dijkstra(graph, directed=False, return_predecessors=True)
            dist[s] = d
            pred[s] = np.where(p == -9999, -1, p)
        return dist, pred

    def _repair(self, old, keys, index, weights, changed, adjacency):
        """Exact closure refresh around a small changed-node set."""
        k, n, _ = weights.shape
        dist = np.full((k, n, n), np.inf)
        pred = np.full((k, n, n), -1, dtype=np.int32)
        remap = np.array([index[key] for key in old.keys], dtype=np.int64)
        for s in range(k):
            dist[s][np.ix_(remap, remap)] = old.dist[s]
            old_p = old.pred[s]
            moved = np.where(old_p >= 0, remap[np.clip(old_p, 0, None)], -1)
            pred[s][np.ix_(remap, remap)] = moved
            np.fill_diagonal(dist[s], 0.0)
        if not changed:
            return dist, pred
        order = sorted(changed)
        sparse = _sparse_per_species(weights)
        for s in range(k):
            d_rows, p_rows = _dijkstra(
                sparse[s],
                directed=False,
                indices=order,
                return_predecessors=True,
            )
            p_rows = np.where(p_rows == -9999, -1, p_rows)
            for row, c in enumerate(order):
                dist[s, c, :] = d_rows[row]
                dist[s, :, c] = d_rows[row]
                pred[s, c, :] = p_rows[row]
            # pivot pass: old pairs that improve must cross a changed node
            d = dist[s]
            p = pred[s]
            for c in order:
                alt = d[:, c : c + 1] + d[c : c + 1, :]
                better = alt < d
                if better.any():
                    d[better] = alt[better]
                    p[better] = np.broadcast_to(p[c], (n, n))[better]
            # final-hop predecessors into each changed node, using final dist
            for c in order:
                nbrs = adjacency.get(c, [])
                if not nbrs:
                    continue
                u_idx = np.array([u for u, _ in nbrs])
                u_w = np.array(
                    [w if weights[s, u, c] < np.inf else np.inf for u, w in nbrs]
                )
                cand = d[:, u_idx] + u_w[None, :]
                best = np.argmin(cand, axis=1)
                col = u_idx[best].astype(np.int32)
                reach = np.isfinite(d[:, c])
                p[reach, c] = col[reach]
                p[c, c] = -1
            np.fill_diagonal(p, -1)
        return dist, pred
