"""Per-robot metric perception map.

Voxels accumulate Gaussian statistics (count, first and second moments)
of scan returns.  Surface normals come from an eigen decomposition of
the 26-neighborhood-fused covariance, oriented toward the observing
sensor.  Each voxel additionally tracks the best observation angle and
distance seen so far (running minima), a return-density estimate, a
per-species hazard flag and a completeness bit.

The completeness bit is monotone: once a voxel counts as completely
observed, later scans can only keep it that way, because density never
falls and the angle/distance minima never rise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .config import PlannerParams, RobotSpecies

# offsets of the 3x3x3 neighborhood, center included
_NEIGHBORHOOD = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
    dtype=np.int64,
)

_MIN_FIT_POINTS = 3  # fewer fused returns than this leaves the normal undefined


def hazard_flags(
    slope_deg: np.ndarray,
    sparsity: np.ndarray,
    difficulty: np.ndarray,
    species: tuple[RobotSpecies, ...],
) -> np.ndarray:
    """Per-voxel, per-species hazard verdicts, shape (V, K).

    A voxel is hazardous for a species when its slope or sparsity
    exceeds that species' limit, its rated difficulty exceeds the
    species' traversal level, or its slope is still unknown.
    """
    slope_deg = np.asarray(slope_deg, dtype=float)
    sparsity = np.asarray(sparsity, dtype=float)
    difficulty = np.asarray(difficulty)
    out = np.empty((len(slope_deg), len(species)), dtype=bool)
    for si, sp in enumerate(species):
        out[:, si] = (
            ~np.isfinite(slope_deg)
            | (slope_deg > sp.slope_limit_deg)
            | (sparsity > sp.sparsity_limit)
            | (difficulty > sp.traversal_level)
        )
    return out


@dataclass(frozen=True)
class Voxel:
    """Read-only snapshot of one map cell."""

    key: tuple[int, int, int]
    count: int
    mean: np.ndarray
    covariance: np.ndarray
    normal: Optional[np.ndarray]
    slope_deg: float
    density: float
    sparsity: float
    obs_angle_deg: float
    obs_distance: float
    risk: tuple[bool, ...]
    covered: bool
    stamp: int


@dataclass
class VoxelPartition:
    """Facade/ground split crossed with the completeness bit.

    Ground sets only contain voxels at least one species can stand on;
    facade sets are unconditional.
    """

    facade_complete: set
    facade_incomplete: set
    ground_complete: set
    ground_incomplete: set


class PerceptionMap:
    def __init__(
        self,
        bounds_min: np.ndarray,
        bounds_max: np.ndarray,
        resolution: float,
        params: PlannerParams,
        species: tuple[RobotSpecies, ...],
        coverage_range: float,
        difficulty_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        self.resolution = float(resolution)
        self.params = params
        self.species = species
        self.coverage_range = float(coverage_range)
        self.difficulty_fn = difficulty_fn
        self.origin = np.floor(np.asarray(bounds_min, dtype=float) / resolution).astype(
            np.int64
        )
        top = np.ceil(np.asarray(bounds_max, dtype=float) / resolution).astype(np.int64)
        self.shape = tuple((top - self.origin + 1).tolist())
        n = len(species)
        self.count = np.zeros(self.shape, dtype=np.uint32)
        self.psum = np.zeros(self.shape + (3,), dtype=np.float64)
        self.outer = np.zeros(self.shape + (6,), dtype=np.float64)  # xx yy zz xy xz yz
        self.normal = np.full(self.shape + (3,), np.nan, dtype=np.float32)
        self.slope = np.full(self.shape, np.nan, dtype=np.float32)
        self.obs_angle = np.full(self.shape, np.inf, dtype=np.float32)
        self.obs_dist = np.full(self.shape, np.inf, dtype=np.float32)
        self.risk = np.ones(self.shape + (n,), dtype=bool)
        self.covered = np.zeros(self.shape, dtype=bool)
        self.stamp = np.zeros(self.shape, dtype=np.uint32)
        self.difficulty = np.zeros(self.shape, dtype=np.int8)  # 0 = not yet rated
        self.integrations = 0
        self.dropped_points = 0

    # ---------- indexing ----------

    def key_of_point(self, p: np.ndarray) -> tuple[int, int, int]:
        return tuple(np.floor(np.asarray(p) / self.resolution).astype(int).tolist())

    def _to_index(self, keys: np.ndarray) -> np.ndarray:
        return keys - self.origin[None, :]

    def _centers(self, idx: np.ndarray) -> np.ndarray:
        return (idx + self.origin[None, :] + 0.5) * self.resolution

    def _in_grid(self, idx: np.ndarray) -> np.ndarray:
        return np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)

    # ---------- integration ----------

    def integrate_scan(self, points: np.ndarray, sensor_position: np.ndarray) -> set:
        """Fold one scan into the map; returns the set of updated voxel keys."""
        self.integrations += 1
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        keys = np.floor(pts / self.resolution).astype(np.int64)
        idx = self._to_index(keys)
        ok = self._in_grid(idx)
        self.dropped_points += int((~ok).sum())
        if not ok.any():
            return set()
        pts, idx = pts[ok], idx[ok]
        flat = np.ravel_multi_index(idx.T, self.shape)

        np.add.at(self.count.reshape(-1), flat, 1)
        np.add.at(self.psum.reshape(-1, 3), flat, pts)
        prods = np.column_stack(
            [
                pts[:, 0] * pts[:, 0],
                pts[:, 1] * pts[:, 1],
                pts[:, 2] * pts[:, 2],
                pts[:, 0] * pts[:, 1],
                pts[:, 0] * pts[:, 2],
                pts[:, 1] * pts[:, 2],
            ]
        )
        np.add.at(self.outer.reshape(-1, 6), flat, prods)

        touched = np.unique(flat)
        tidx = np.stack(np.unravel_index(touched, self.shape), axis=1)

        # normals shift wherever the 3x3x3 stats changed
        dil = (tidx[:, None, :] + _NEIGHBORHOOD[None, :, :]).reshape(-1, 3)
        dil = dil[self._in_grid(dil)]
        dflat = np.unique(np.ravel_multi_index(dil.T, self.shape))
        dflat = dflat[self.count.reshape(-1)[dflat] > 0]
        self._refit_normals(
            np.stack(np.unravel_index(dflat, self.shape), axis=1),
            np.asarray(sensor_position, dtype=float),
        )

        self._update_observation(tidx, np.asarray(sensor_position, dtype=float))
        self._update_risk(np.stack(np.unravel_index(dflat, self.shape), axis=1))
        self._update_covered(tidx)
        self.stamp.reshape(-1)[touched] = self.integrations
        out_keys = tidx + self.origin[None, :]
        return {tuple(k) for k in out_keys.tolist()}

    def _refit_normals(self, idx: np.ndarray, sensor: np.ndarray) -> None:
        if len(idx) == 0:
            return
        n = len(idx)
        acc_c = np.zeros(n, dtype=np.float64)
        acc_s = np.zeros((n, 3), dtype=np.float64)
        acc_o = np.zeros((n, 6), dtype=np.float64)
        cflat = self.count.reshape(-1)
        sflat = self.psum.reshape(-1, 3)
        oflat = self.outer.reshape(-1, 6)
        for off in _NEIGHBORHOOD:
            nb = idx + off[None, :]
            keep = self._in_grid(nb)
            f = np.ravel_multi_index(np.clip(nb, 0, np.array(self.shape) - 1).T, self.shape)
            w = keep.astype(np.float64)
            acc_c += cflat[f] * w
            acc_s += sflat[f] * w[:, None]
            acc_o += oflat[f] * w[:, None]

        defined = acc_c >= _MIN_FIT_POINTS
        flat = np.ravel_multi_index(idx.T, self.shape)
        nf = self.normal.reshape(-1, 3)
        sf = self.slope.reshape(-1)
        nf[flat[~defined]] = np.nan
        sf[flat[~defined]] = np.nan
        if not defined.any():
            return
        c = acc_c[defined]
        mean = acc_s[defined] / c[:, None]
        o = acc_o[defined] / c[:, None]
        cov = np.empty((len(c), 3, 3))
        cov[:, 0, 0] = o[:, 0] - mean[:, 0] ** 2
        cov[:, 1, 1] = o[:, 1] - mean[:, 1] ** 2
        cov[:, 2, 2] = o[:, 2] - mean[:, 2] ** 2
        cov[:, 0, 1] = cov[:, 1, 0] = o[:, 3] - mean[:, 0] * mean[:, 1]
        cov[:, 0, 2] = cov[:, 2, 0] = o[:, 4] - mean[:, 0] * mean[:, 2]
        cov[:, 1, 2] = cov[:, 2, 1] = o[:, 5] - mean[:, 1] * mean[:, 2]
        _, vecs = np.linalg.eigh(cov)
        normals = vecs[:, :, 0]  # smallest-eigenvalue direction

        didx = idx[defined]
        centers = self._centers(didx)
        old = nf[flat[defined]]
        had_old = np.isfinite(old[:, 0])
        # keep the established facing; orient fresh normals toward the sensor
        ref = np.where(had_old[:, None], old, sensor[None, :] - centers)
        flip = np.einsum("ij,ij->i", normals, ref) < 0.0
        normals[flip] *= -1.0
        nf[flat[defined]] = normals.astype(np.float32)
        sf[flat[defined]] = np.degrees(
            np.arccos(np.clip(np.abs(normals[:, 2]), 0.0, 1.0))
        ).astype(np.float32)

    def _update_observation(self, tidx: np.ndarray, sensor: np.ndarray) -> None:
        flat = np.ravel_multi_index(tidx.T, self.shape)
        centers = self._centers(tidx)
        vec = sensor[None, :] - centers
        dist = np.linalg.norm(vec, axis=1)
        od = self.obs_dist.reshape(-1)
        od[flat] = np.minimum(od[flat], dist.astype(np.float32))
        normals = self.normal.reshape(-1, 3)[flat]
        have = np.isfinite(normals[:, 0]) & (dist > 1e-9)
        if have.any():
            cosang = np.einsum("ij,ij->i", normals[have], vec[have]) / dist[have]
            ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
            oa = self.obs_angle.reshape(-1)
            f = flat[have]
            oa[f] = np.minimum(oa[f], ang.astype(np.float32))

    def _update_risk(self, idx: np.ndarray) -> None:
        if len(idx) == 0:
            return
        flat = np.ravel_multi_index(idx.T, self.shape)
        need_rating = self.difficulty.reshape(-1)[flat] == 0
        if need_rating.any():
            fresh = idx[need_rating]
            if self.difficulty_fn is not None:
                lv = self.difficulty_fn(self._centers(fresh)[:, :2])
            else:
                lv = 1
            lv = np.broadcast_to(np.asarray(lv, dtype=np.int32), (len(fresh),))
            self.difficulty.reshape(-1)[flat[need_rating]] = lv.astype(np.int8)
        slope = self.slope.reshape(-1)[flat]
        count = self.count.reshape(-1)[flat].astype(np.float64)
        sparsity = np.where(count > 0, self.resolution**2 / np.maximum(count, 1), np.inf)
        level = self.difficulty.reshape(-1)[flat]
        rk = self.risk.reshape(-1, len(self.species))
        rk[flat] = hazard_flags(slope, sparsity, level, self.species)

    def _update_covered(self, tidx: np.ndarray) -> None:
        flat = np.ravel_multi_index(tidx.T, self.shape)
        count = self.count.reshape(-1)[flat].astype(np.float64)
        density = count / (self.resolution**2)
        good = (
            (density > self.params.min_density)
            & (self.obs_angle.reshape(-1)[flat] < self.params.max_obs_angle_deg)
            & (self.obs_dist.reshape(-1)[flat] < self.coverage_range)
        )
        cv = self.covered.reshape(-1)
        cv[flat] |= good

    # ---------- queries ----------

    def occupied_indices(self) -> np.ndarray:
        return np.stack(np.nonzero(self.count > 0), axis=1)

    def voxel(self, key: tuple[int, int, int]) -> Optional[Voxel]:
        idx = np.asarray(key, dtype=np.int64) - self.origin
        if not self._in_grid(idx[None, :])[0]:
            return None
        i = tuple(idx.tolist())
        c = int(self.count[i])
        if c == 0:
            return None
        normal = self.normal[i]
        density = c / self.resolution**2
        mean = self.psum[i] / c
        o = self.outer[i] / c
        cov = np.array(
            [
                [o[0] - mean[0] ** 2, o[3] - mean[0] * mean[1], o[4] - mean[0] * mean[2]],
                [o[3] - mean[0] * mean[1], o[1] - mean[1] ** 2, o[5] - mean[1] * mean[2]],
                [o[4] - mean[0] * mean[2], o[5] - mean[1] * mean[2], o[2] - mean[2] ** 2],
            ]
        )
        return Voxel(
            key=tuple(key),
            count=c,
            mean=mean,
            covariance=cov,
            normal=None if not np.isfinite(normal[0]) else normal.copy(),
            slope_deg=float(self.slope[i]),
            density=density,
            sparsity=1.0 / density,
            obs_angle_deg=float(self.obs_angle[i]),
            obs_distance=float(self.obs_dist[i]),
            risk=tuple(bool(b) for b in self.risk[i]),
            covered=bool(self.covered[i]),
            stamp=int(self.stamp[i]),
        )

    def traversability(self, key: tuple[int, int, int]) -> Optional[tuple[bool, ...]]:
        """Per-species hazard-free flags; None for empty cells."""
        v = self.voxel(key)
        if v is None:
            return None
        return tuple(not r for r in v.risk)

    def coverage_status(self, key: tuple[int, int, int]) -> bool:
        v = self.voxel(key)
        return bool(v is not None and v.covered)

    def partition(self) -> VoxelPartition:
        """Classify every voxel with a defined normal."""
        occ = self.count > 0
        defined = occ & np.isfinite(self.slope)
        idx = np.stack(np.nonzero(defined), axis=1)
        if len(idx) == 0:
            return VoxelPartition(set(), set(), set(), set())
        flat = np.ravel_multi_index(idx.T, self.shape)
        slope = self.slope.reshape(-1)[flat]
        covered = self.covered.reshape(-1)[flat]
        passable = ~self.risk.reshape(-1, len(self.species))[flat].all(axis=1)
        ground = slope < self.params.facade_slope_deg
        keys = idx + self.origin[None, :]

        def pick(mask: np.ndarray) -> set:
            return {tuple(k) for k in keys[mask].tolist()}

        return VoxelPartition(
            facade_complete=pick(~ground & covered),
            facade_incomplete=pick(~ground & ~covered),
            ground_complete=pick(ground & covered & passable),
            ground_incomplete=pick(ground & ~covered & passable),
        )

    def dump_csv(self, path: str) -> None:
        names = [s.name for s in self.species]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["kx", "ky", "kz", "count", "mx", "my", "mz", "nx", "ny", "nz",
                 "slope_deg", "density", "obs_angle_deg", "obs_distance",
                 *(f"risk_{n}" for n in names), "covered", "stamp"]
            )
            for idx in self.occupied_indices():
                key = tuple((idx + self.origin).tolist())
                v = self.voxel(key)
                normal = (np.nan, np.nan, np.nan) if v.normal is None else tuple(v.normal)
                w.writerow(
                    [*key, v.count, *(f"{x:.4f}" for x in v.mean),
                     *(f"{x:.4f}" for x in normal),
                     f"{v.slope_deg:.2f}", f"{v.density:.3f}",
                     f"{v.obs_angle_deg:.2f}", f"{v.obs_distance:.3f}",
                     *(int(r) for r in v.risk), int(v.covered), v.stamp]
                )
