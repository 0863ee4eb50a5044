"""Supervoxel abstraction over the perception map.

Occupied voxels are grouped into roughly seed-interval-sized regions:
one seed per lattice cell (the occupied voxel nearest the cell center),
duplicate seeds closer than the merge radius collapsed onto the
lexicographically smallest one, then a synchronous multi-source
wavefront over 26-adjacency assigns every occupied voxel to the seed
whose front arrives first (ties go to the smaller seed key).

Each region is summarized by a fixed-size record: center, mean normal,
ground/facade kind, completeness bit, traversal requirement and a
version counter.  Records from teammates are kept per sender, and the
fused view of a supervoxel is derived from all contributions in sender
order, which makes the fused table independent of message arrival
order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .config import INFEASIBLE, PlannerParams, RobotSpecies
from .perception import PerceptionMap

_KEY_BITS = 21
_KEY_MASK = (1 << _KEY_BITS) - 1
_KEY_SIGN = 1 << (_KEY_BITS - 1)

# oct-code reserved for "no normal estimate"
NORMAL_UNDEFINED = 0xFFFF

_SHIFTS26 = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]
_SHIFTS_HALF = [s for s in _SHIFTS26 if s > (0, 0, 0)]

KIND_GROUND = 0
KIND_FACADE = 1


# ---------- key packing ----------

def pack_key(cell: tuple[int, int, int]) -> int:
    """Pack lattice coordinates into a 64-bit key, 21 bits per axis."""
    out = 0
    for i, c in enumerate(cell):
        if not -_KEY_SIGN <= c < _KEY_SIGN:
            raise ValueError(f"lattice coordinate {c} exceeds 21-bit range")
        out |= (c & _KEY_MASK) << (_KEY_BITS * i)
    return out


def unpack_key(key: int) -> tuple[int, int, int]:
    out = []
    for i in range(3):
        v = (key >> (_KEY_BITS * i)) & _KEY_MASK
        out.append(v - (1 << _KEY_BITS) if v & _KEY_SIGN else v)
    return tuple(out)


def key_sort_value(key: int) -> tuple[int, int, int]:
    """Lexicographic ordering is on the unpacked coordinates."""
    return unpack_key(key)


# ---------- octahedral normal codec ----------

def oct_encode(normal: np.ndarray) -> int:
    """Map a unit vector to a 16-bit octahedral code (8 bits per axis).

    The four rounding corners are tried and the one that decodes closest
    to the input is kept, so the worst-case decode error stays well
    under a degree.  Undefined input maps to the reserved sentinel.
    """
    if normal is None:
        return NORMAL_UNDEFINED
    n = np.asarray(normal, dtype=np.float64)
    if n.shape != (3,) or not np.all(np.isfinite(n)):
        return NORMAL_UNDEFINED
    n = n / np.linalg.norm(n)
    p = n[:2] / (abs(n[0]) + abs(n[1]) + abs(n[2]))
    if n[2] < 0.0:
        p = (1.0 - np.abs(p[::-1])) * np.where(p >= 0.0, 1.0, -1.0)
    raw = (p * 0.5 + 0.5) * 255.0
    best_code, best_dot = 0, -2.0
    for du in (0, 1):
        for dv in (0, 1):
            u = min(255, max(0, int(np.floor(raw[0])) + du))
            v = min(255, max(0, int(np.floor(raw[1])) + dv))
            code = u | (v << 8)
            if code == NORMAL_UNDEFINED:
                u = 254  # reserved code, nudge one step
                code = u | (v << 8)
            d = float(np.dot(oct_decode(code), n))
            if d > best_dot:
                best_dot, best_code = d, code
    return best_code


def oct_decode(code: int) -> Optional[np.ndarray]:
    if code == NORMAL_UNDEFINED:
        return None
    u = (code & 0xFF) / 255.0 * 2.0 - 1.0
    v = ((code >> 8) & 0xFF) / 255.0 * 2.0 - 1.0
    z = 1.0 - abs(u) - abs(v)
    if z < 0.0:
        u, v = (1.0 - abs(v)) * (1.0 if u >= 0.0 else -1.0), (
            1.0 - abs(u)
        ) * (1.0 if v >= 0.0 else -1.0)
    n = np.array([u, v, z])
    return n / np.linalg.norm(n)


# ---------- records ----------

@dataclass(frozen=True)
class SupervoxelRecord:
    """Wire-shaped summary of one supervoxel from one sender."""

    key: int
    center: tuple[float, float, float]  # stored at f32 precision
    normal_oct: int                     # NORMAL_UNDEFINED when unknown
    kind: int
    covered: bool
    requirement: int                    # INFEASIBLE when nobody qualifies
    version: int
    updated_at: int                     # tick of the last change

    def normal(self) -> Optional[np.ndarray]:
        if self.normal_oct == NORMAL_UNDEFINED:
            return None
        return oct_decode(self.normal_oct)


@dataclass(frozen=True)
class FusedSupervoxel:
    key: int
    center: np.ndarray
    normal: Optional[np.ndarray]
    kind: int
    covered: bool
    requirement: int
    version: int
    member_count: int


def fuse_records(records: list[tuple[int, SupervoxelRecord]]) -> FusedSupervoxel:
    """Combine per-sender records; input order does not matter."""
    recs = sorted(records, key=lambda sr: sr[0])
    covered = any(r.covered for _, r in recs)
    requirement = max(r.requirement for _, r in recs)
    version = max(r.version for _, r in recs)
    # freshest record wins shape attributes; sender id breaks ties
    _, lead = min(recs, key=lambda sr: (-sr[1].version, sr[0]))
    normals = [r.normal() for _, r in recs if r.normal_oct != NORMAL_UNDEFINED]
    normal: Optional[np.ndarray] = None
    if normals:
        total = np.sum(normals, axis=0)
        norm = np.linalg.norm(total)
        # opposing contributions nearly cancel; normalizing that residue
        # would fabricate a direction, so fall back to the lowest sender
        normal = total / norm if norm > 0.1 else normals[0]
    return FusedSupervoxel(
        key=lead.key,
        center=np.asarray(lead.center, dtype=np.float64),
        normal=normal,
        kind=lead.kind,
        covered=covered,
        requirement=requirement,
        version=version,
        member_count=0,
    )


def requirement_from_risk(
    risky_by_species: np.ndarray, species: tuple[RobotSpecies, ...]
) -> int:
    """Traversal requirement of one region from its member hazard matrix.

    `risky_by_species` is (V, K) bool over the region's voxels.  The
    answer is the traversal level of the least capable species that
    finds no member hazardous, INFEASIBLE when every species objects.
    The resegmentation loop computes the same fold for all regions at
    once; a property test holds the two together.
    """
    risky = np.asarray(risky_by_species, dtype=bool).reshape(
        -1, len(species)
    )
    requirement = INFEASIBLE
    for si in sorted(
        range(len(species)), key=lambda i: -species[i].traversal_level
    ):
        if not risky[:, si].any():
            requirement = species[si].traversal_level
    return int(requirement)


def _shift_min(dst: np.ndarray, src: np.ndarray, off: tuple[int, int, int]) -> None:
    """dst = min(dst, src translated by off), both same-shape 3D arrays."""
    sl_d, sl_s = [], []
    for o, n in zip(off, dst.shape):
        if o >= 0:
            sl_d.append(slice(o, n))
            sl_s.append(slice(0, n - o))
        else:
            sl_d.append(slice(0, n + o))
            sl_s.append(slice(-o, n))
    np.minimum(dst[tuple(sl_d)], src[tuple(sl_s)], out=dst[tuple(sl_d)])


class SupervoxelMap:
    """Own segmentation plus per-sender records from teammates."""

    def __init__(
        self,
        params: PlannerParams,
        species: tuple[RobotSpecies, ...],
        sender_id: int,
    ):
        self.params = params
        self.species = species
        self.sender_id = sender_id
        # key -> sender -> record; own contributions live under sender_id
        self.records: dict[int, dict[int, SupervoxelRecord]] = {}
        self.own_edges: dict[tuple[int, int], int] = {}  # pair -> first-seen tick
        self.remote_edges: set[tuple[int, int]] = set()
        self._labels: Optional[np.ndarray] = None
        self._label_keys: list[int] = []
        self._label_origin: Optional[np.ndarray] = None
        self._pmap_origin: Optional[np.ndarray] = None
        self._resolution: Optional[float] = None
        self._fused_cache: Optional[dict[int, FusedSupervoxel]] = None

    # ---------- segmentation ----------

    def resegment(
        self, pmap: PerceptionMap, updated_keys: set, tick: int
    ) -> set[int]:
        """Refresh own records after map updates; returns changed keys.

        An empty update set cannot move any region boundary, so it is a
        no-op.  Otherwise the segmentation is recomputed and diffed
        against the previous records, which keeps the result bit-equal
        to a from-scratch segmentation by construction.
        """
        if not updated_keys:
            return set()
        return self.segment(pmap, tick)

    def segment(self, pmap: PerceptionMap, tick: int) -> set[int]:
        res = pmap.resolution
        pitch = self.params.seed_interval
        occ_idx = pmap.occupied_indices()
        if len(occ_idx) == 0:
            return set()
        centers = (occ_idx + pmap.origin[None, :] + 0.5) * res
        lat = np.floor(centers / pitch).astype(np.int64)

        seeds = self._select_seeds(occ_idx, centers, lat, pitch)
        merged = self._merge_seeds(seeds, pitch)
        labels, label_keys = self._grow(pmap, occ_idx, seeds, merged)
        new_records, counts = self._extract(
            pmap, occ_idx, labels, label_keys, tick
        )
        edges = self._derive_edges(pmap, occ_idx, labels, label_keys, new_records)
        changed = self._commit(new_records, counts, edges, merged, seeds, tick)
        self._labels = labels
        self._label_keys = label_keys
        self._pmap_origin = pmap.origin.copy()
        self._resolution = res
        self._fused_cache = None
        return changed

    def _select_seeds(self, occ_idx, centers, lat, pitch):
        """One seed per lattice cell: occupied voxel nearest the cell center."""
        cell_center = (lat + 0.5) * pitch
        d2 = np.sum((centers - cell_center) ** 2, axis=1)
        lat_id = (
            (lat[:, 0].astype(np.int64) << 42)
            ^ (lat[:, 1].astype(np.int64) << 21)
            ^ lat[:, 2].astype(np.int64)
        )
        order = np.lexsort(
            (occ_idx[:, 2], occ_idx[:, 1], occ_idx[:, 0], d2, lat_id)
        )
        sorted_ids = lat_id[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_ids[1:] != sorted_ids[:-1]
        pick = order[first]
        # seed: lattice cell, seed voxel grid index, seed position
        return {
            tuple(lat[i].tolist()): (occ_idx[i], centers[i]) for i in pick
        }

    def _merge_seeds(self, seeds, pitch):
        """Collapse seed pairs closer than the merge radius.

        Components under the near-duplicate relation adopt the
        lexicographically smallest member cell.  Only neighboring
        lattice cells can host such pairs because the merge radius is
        below the seed pitch.
        """
        reach = self.params.seed_merge_radius
        cells = sorted(seeds)
        adj: dict[tuple, list[tuple]] = {c: [] for c in cells}
        for c in cells:
            _, pos = seeds[c]
            for off in _SHIFTS26:
                nb = (c[0] + off[0], c[1] + off[1], c[2] + off[2])
                other = seeds.get(nb)
                if other is not None and np.linalg.norm(other[1] - pos) < reach:
                    adj[c].append(nb)
        kept: dict[tuple, tuple] = {}
        seen: set[tuple] = set()
        for c in cells:  # ascending, so the first unseen cell roots its component
            if c in seen:
                continue
            comp, queue = [], [c]
            seen.add(c)
            while queue:
                cur = queue.pop()
                comp.append(cur)
                for nb in adj[cur]:
                    if nb not in seen:
                        seen.add(nb)
                        queue.append(nb)
            root = min(comp)
            for m in comp:
                kept[m] = root
        return kept

    def _grow(self, pmap, occ_idx, seeds, merged):
        """Synchronous multi-source wavefront; min label wins level ties."""
        roots = sorted({pack_key(r) for r in merged.values()}, key=key_sort_value)
        label_of_root = {k: i for i, k in enumerate(roots)}
        INF = np.iinfo(np.int32).max
        shape = pmap.shape
        occ = pmap.count > 0
        work = np.full(shape, INF, dtype=np.int32)
        for cell, (vidx, _) in seeds.items():
            root_key = pack_key(merged[cell])
            work[tuple(vidx)] = label_of_root[root_key]
        while True:
            cand = np.full(shape, INF, dtype=np.int32)
            for off in _SHIFTS26:
                _shift_min(cand, work, off)
            new = (work == INF) & occ & (cand != INF)
            if not new.any():
                break
            work[new] = cand[new]
        labels = np.where(work == INF, -1, work)
        return labels, roots

    def _extract(self, pmap, occ_idx, labels, label_keys, tick):
        """Vectorized per-region attribute aggregation."""
        res = pmap.resolution
        n_lab = len(label_keys)
        flat = np.ravel_multi_index(occ_idx.T, pmap.shape)
        lab = labels.reshape(-1)[flat]
        centers = (occ_idx + pmap.origin[None, :] + 0.5) * res
        counts = np.bincount(lab, minlength=n_lab)

        csum = np.zeros((n_lab, 3))
        for a in range(3):
            csum[:, a] = np.bincount(lab, weights=centers[:, a], minlength=n_lab)
        mean_center = csum / counts[:, None]

        normals = pmap.normal.reshape(-1, 3)[flat]
        defined = np.isfinite(normals[:, 0])
        nsum = np.zeros((n_lab, 3))
        for a in range(3):
            nsum[:, a] = np.bincount(
                lab[defined], weights=normals[defined, a], minlength=n_lab
            )
        n_defined = np.bincount(lab[defined], minlength=n_lab)

        slope = pmap.slope.reshape(-1)[flat]
        is_facade = defined & (slope >= self.params.facade_slope_deg)
        facade_votes = np.bincount(lab[is_facade], minlength=n_lab)
        ground_votes = n_defined - facade_votes
        kind = np.where(ground_votes > facade_votes, KIND_GROUND, KIND_FACADE)

        uncovered = np.bincount(
            lab[~pmap.covered.reshape(-1)[flat]], minlength=n_lab
        )
        covered = uncovered == 0

        requirement = np.full(n_lab, INFEASIBLE, dtype=np.int32)
        risk = pmap.risk.reshape(-1, len(self.species))[flat]
        for si in sorted(
            range(len(self.species)), key=lambda i: -self.species[i].traversal_level
        ):
            risky = np.bincount(lab[risk[:, si]], minlength=n_lab)
            ok = risky == 0
            requirement[ok] = self.species[si].traversal_level

        records = {}
        for li, key in enumerate(label_keys):
            if counts[li] == 0:
                continue
            nvec = nsum[li]
            norm = np.linalg.norm(nvec)
            noct = (
                oct_encode(nvec / norm)
                if n_defined[li] > 0 and norm > 1e-9
                else NORMAL_UNDEFINED
            )
            c32 = tuple(np.asarray(mean_center[li], dtype=np.float32).tolist())
            records[key] = SupervoxelRecord(
                key=key,
                center=c32,
                normal_oct=noct,
                kind=int(kind[li]),
                covered=bool(covered[li]),
                requirement=int(requirement[li]),
                version=0,  # assigned at commit
                updated_at=tick,
            )
        return records, {k: int(counts[i]) for i, k in enumerate(label_keys)}

    def _derive_edges(self, pmap, occ_idx, labels, label_keys, records):
        """Adjacent ground-region pairs, 26-connectivity on member voxels."""
        pairs = set()
        for off in _SHIFTS_HALF:
            a, b = labels.copy(), np.full_like(labels, -1)
            sl_d, sl_s = [], []
            for o, n in zip(off, labels.shape):
                sl_d.append(slice(o, n) if o >= 0 else slice(0, n + o))
                sl_s.append(slice(0, n - o) if o >= 0 else slice(-o, n))
            b[tuple(sl_d)] = labels[tuple(sl_s)]
            both = (a >= 0) & (b >= 0) & (a != b)
            if both.any():
                la, lb = a[both], b[both]
                stacked = np.unique(
                    np.stack([np.minimum(la, lb), np.maximum(la, lb)], axis=1), axis=0
                )
                pairs.update(map(tuple, stacked.tolist()))
        edges = set()
        for la, lb in pairs:
            ka, kb = label_keys[la], label_keys[lb]
            ra, rb = records.get(ka), records.get(kb)
            if ra is None or rb is None:
                continue
            if ra.kind == KIND_GROUND and rb.kind == KIND_GROUND:
                edges.add(
                    (ka, kb)
                    if key_sort_value(ka) < key_sort_value(kb)
                    else (kb, ka)
                )
        return edges

    def _commit(self, new_records, counts, edges, merged, seeds, tick):
        own_prev = {
            k: senders[self.sender_id]
            for k, senders in self.records.items()
            if self.sender_id in senders
        }
        changed: set[int] = set()
        committed: dict[int, SupervoxelRecord] = {}
        for key, rec in new_records.items():
            prev = own_prev.get(key)
            if prev is None:
                committed[key] = replace(rec, version=1, updated_at=tick)
                changed.add(key)
            elif self._wire_equal(prev, rec):
                committed[key] = prev
            else:
                committed[key] = replace(
                    rec, version=prev.version + 1, updated_at=tick
                )
                changed.add(key)
        # regions whose seed merged away adopt the absorbing record
        absorb = {pack_key(c): pack_key(r) for c, r in merged.items() if c != r}
        for key, prev in own_prev.items():
            if key in committed:
                continue
            target = absorb.get(key)
            host = committed.get(target) if target is not None else None
            if host is None:
                committed[key] = prev  # frozen; nothing absorbed it this epoch
                continue
            ghost = replace(
                prev,
                normal_oct=host.normal_oct,
                kind=host.kind,
                covered=host.covered,
                requirement=host.requirement,
            )
            if self._wire_equal(prev, ghost):
                committed[key] = prev
            else:
                committed[key] = replace(
                    ghost, version=prev.version + 1, updated_at=tick
                )
                changed.add(key)
        for key, rec in committed.items():
            self.records.setdefault(key, {})[self.sender_id] = rec
        self._member_counts = counts
        new_edges = {}
        for pair in edges:
            new_edges[pair] = self.own_edges.get(pair, tick)
        self.own_edges = new_edges
        return changed

    @staticmethod
    def _wire_equal(a: SupervoxelRecord, b: SupervoxelRecord) -> bool:
        return (
            a.center == b.center
            and a.normal_oct == b.normal_oct
            and a.kind == b.kind
            and a.covered == b.covered
            and a.requirement == b.requirement
        )

    # ---------- teammate input ----------

    def absorb_record(self, sender: int, rec: SupervoxelRecord) -> bool:
        """Store a teammate record; stale or duplicate versions are ignored."""
        slot = self.records.setdefault(rec.key, {})
        cur = slot.get(sender)
        if cur is not None and cur.version >= rec.version:
            return False
        slot[sender] = rec
        self._fused_cache = None
        return True

    def absorb_edge(self, key_a: int, key_b: int) -> None:
        pair = (
            (key_a, key_b)
            if key_sort_value(key_a) < key_sort_value(key_b)
            else (key_b, key_a)
        )
        if pair not in self.own_edges and pair not in self.remote_edges:
            self.remote_edges.add(pair)
            self._fused_cache = None

    # ---------- views ----------

    def fused_table(self) -> dict[int, FusedSupervoxel]:
        if self._fused_cache is None:
            table = {}
            for key, senders in self.records.items():
                fused = fuse_records(list(senders.items()))
                count = getattr(self, "_member_counts", {}).get(key, 0)
                table[key] = replace(fused, member_count=count)
            self._fused_cache = table
        return self._fused_cache

    def edges(self) -> set[tuple[int, int]]:
        return set(self.own_edges) | self.remote_edges

    def own_records(self) -> dict[int, SupervoxelRecord]:
        """This sender's records, ghosts included."""
        return {
            key: senders[self.sender_id]
            for key, senders in self.records.items()
            if self.sender_id in senders
        }

    def members_of(self, key: int) -> set[tuple[int, int, int]]:
        """Member voxel keys from the last own segmentation."""
        if self._labels is None or key not in self._label_keys:
            return set()
        li = self._label_keys.index(key)
        idx = np.stack(np.nonzero(self._labels == li), axis=1)
        keys = idx + self._pmap_origin[None, :]
        return {tuple(k) for k in keys.tolist()}

    def own_changed_in(self, since: int, now: int) -> list[SupervoxelRecord]:
        """Own records stamped inside the half-open window (since, now]."""
        out = [
            senders[self.sender_id]
            for senders in self.records.values()
            if self.sender_id in senders
            and since < senders[self.sender_id].updated_at <= now
        ]
        return sorted(out, key=lambda r: key_sort_value(r.key))

    def edges_changed_in(self, since: int, now: int) -> list[tuple[int, int]]:
        """Own edges first seen in the window or touching a changed record."""
        changed_keys = {r.key for r in self.own_changed_in(since, now)}
        out = []
        for (ka, kb), first in self.own_edges.items():
            if since < first <= now or ka in changed_keys or kb in changed_keys:
                out.append((ka, kb))
        return sorted(out, key=lambda p: (key_sort_value(p[0]), key_sort_value(p[1])))

    def table_hash(self) -> str:
        h = hashlib.sha256()
        table = self.fused_table()
        for key in sorted(table, key=key_sort_value):
            sv = table[key]
            c = np.asarray(sv.center, dtype=np.float32)
            noct = NORMAL_UNDEFINED if sv.normal is None else oct_encode(sv.normal)
            h.update(
                struct.pack(
                    "<Q3fHBBBB",
                    key,
                    *c.tolist(),
                    noct,
                    sv.kind,
                    int(sv.covered),
                    min(sv.requirement, 255),
                    min(sv.version, 255),
                )
            )
        return h.hexdigest()
