"""Tick-level harness: agents, the message bus, and the physics guard.

The loop is deterministic by construction.  Agents act in robot-id
order at every phase, frames flush in that order, and every random
draw comes from a generator seeded by (run seed, robot id, purpose),
so a rerun with the same inputs reproduces every byte.  Scans happen
on communication boundaries; motion integrates every tick.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .agent import ExplorerAgent, VARIANTS
from .comms import CAT_MAP, CAT_PATH, CAT_POSE, CAT_ROUTE, CATEGORY_NAMES, NetworkBus
from .config import StackConfig, flatten_capabilities
from .safety import proximity_stop
from .world import (
    Pose,
    ScenarioWorld,
    SensorModel,
    ground_truth_surface,
    difficulty_at,
    simulate_scan,
    strip_teammate_returns,
    terrain_height,
)

log = logging.getLogger(__name__)

METRICS_STATIC = ["tick", "time_s", "completeness", "min_pairwise_m"]
BYTE_COLUMNS = [f"bytes_{name}" for name in CATEGORY_NAMES.values()]


@dataclass
class SimResult:
    scenario: str
    variant: str
    seed: int
    ticks: int
    sim_time_s: float
    completeness: float
    contributions: dict[int, float]
    metrics_header: list[str]
    metrics: list[list[float]]
    planning_header: list[str]
    planning: list[list[float]]
    trajectories: dict[int, np.ndarray]
    travelled_m: dict[int, float]
    bytes_by_category: dict[str, int]
    map_increment_bytes: int
    full_policy_bytes: int
    raw_policy_bytes: int
    deadlocks_total: int
    deadlocks_unresolved: int
    min_pairwise_m: float
    table_hashes: dict[int, str]
    planning_ms_mean: float
    planning_ms_max: float
    unreachable_clusters: int = 0

    @property
    def deadlocks_resolved(self) -> int:
        return self.deadlocks_total - self.deadlocks_unresolved


class CompletenessTracker:
    """Ground-truth cells claimed by whoever mapped them first.

    A truth cell counts once a region summary sits within a Chebyshev
    box of three quarters of a cell; the first robot (by period, then
    id) keeps the credit, so per-robot shares always sum to the team
    total.
    """

    def __init__(self, world: ScenarioWorld, resolution: float):
        self.truth = ground_truth_surface(world, resolution)
        self.radius = 0.75 * resolution
        self.claimed = np.zeros(len(self.truth), dtype=bool)
        self.owner = np.full(len(self.truth), -1, dtype=np.int64)

    def update(self, agents: dict[int, ExplorerAgent]) -> None:
        open_idx = np.flatnonzero(~self.claimed)
        if len(open_idx) == 0:
            return
        targets = self.truth.centers[open_idx]
        for rid in sorted(agents):
            own = agents[rid].svmap.own_records()
            if not own:
                continue
            centers = np.array([rec.center for rec in own.values()])
            tree = cKDTree(centers)
            d, _ = tree.query(
                targets, p=np.inf, distance_upper_bound=self.radius
            )
            hit = np.isfinite(d)
            if not hit.any():
                continue
            rows = open_idx[hit]
            self.claimed[rows] = True
            self.owner[rows] = rid
            keep = ~hit
            open_idx = open_idx[keep]
            targets = targets[keep]
            if len(open_idx) == 0:
                break

    @property
    def completeness(self) -> float:
        return float(self.claimed.mean()) if len(self.claimed) else 1.0

    def contributions(self, ids: list[int]) -> dict[int, float]:
        n = max(len(self.claimed), 1)
        return {rid: float((self.owner == rid).sum()) / n for rid in ids}


class Simulation:
    def __init__(
        self,
        world: ScenarioWorld,
        config: StackConfig,
        seed: int,
        variant: str = "full",
        workers: int = 0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.world = world
        self.config = config
        self.seed = seed
        self.variant = variant
        self.workers = workers
        params, sim = config.planner, config.sim

        registry = world.species
        if variant == "no_hetero":
            registry = flatten_capabilities(registry)
        self.registry = registry
        by_name = {sp.name: i for i, sp in enumerate(registry)}

        self.sensors = {
            sp.name: SensorModel(
                max_range=sp.sensor_range,
                rays_azimuth=sim.rays_azimuth,
                rays_elevation=sim.rays_elevation,
                noise_sigma=sim.scan_noise,
            )
            for sp in registry
        }

        roster = [
            (spec.robot_id, spec.species, self._snap(spec.start))
            for spec in world.robots
        ]
        self.agents: dict[int, ExplorerAgent] = {}
        for rid, name, start in roster:
            self.agents[rid] = ExplorerAgent(
                robot_id=rid,
                species=registry[by_name[name]],
                species_registry=registry,
                start=start,
                bounds_min=world.bounds_min,
                bounds_max=world.bounds_max,
                params=params,
                sim=sim,
                seed=seed,
                variant=variant,
                difficulty_fn=lambda xy: difficulty_at(world, xy),
                team=roster,
            )

        self.bus = NetworkBus(latency_ticks=sim.bus_latency_ticks)
        self.tracker = CompletenessTracker(world, sim.truth_resolution)
        self.comm_ticks = max(1, int(round(params.comm_period_s / sim.tick_dt)))
        self.metrics_header = (
            METRICS_STATIC
            + [f"contrib_{rid}" for rid in sorted(self.agents)]
            + [
                f"{axis}_{rid}"
                for rid in sorted(self.agents)
                for axis in ("x", "y", "z")
            ]
            + [f"{col}_per_robot" for col in BYTE_COLUMNS]
        )
        self.planning_header = [
            "tick",
            "robot",
            "round",
            "n_supervoxels",
            "n_views",
            "n_clusters",
            "planning_ms",
        ]

    def _snap(self, start: np.ndarray) -> np.ndarray:
        p = np.asarray(start, dtype=float).copy()
        p[2] = float(terrain_height(self.world, p[None, :2])[0])
        return p

    # ---------- phases ----------

    def _scan_one(self, agent: ExplorerAgent, tick: int) -> None:
        pose = Pose(
            position=agent.position
            + np.array([0.0, 0.0, self.config.sim.sensor_height]),
            yaw=agent.yaw,
        )
        pts = simulate_scan(
            self.world, pose, self.sensors[agent.species.name], agent._scan_rng
        )
        pts = strip_teammate_returns(pts, agent.teammate_bodies())
        agent.integrate_scan(pts, tick)
        agent.on_scan_complete(tick)

    def _comm_phase(self, tick: int, order: list[int]) -> None:
        if self.workers >= 2:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                list(pool.map(lambda r: self._scan_one(self.agents[r], tick), order))
        else:
            for rid in order:
                self._scan_one(self.agents[rid], tick)
        outbox: list[tuple[int, int, bytes]] = []
        for rid in order:
            agent = self.agents[rid]
            for cat, data in agent.comm_payloads(tick):
                outbox.append((rid, cat, data))
            full, raw = agent.policy_costs()
            self.bus.note_policy_costs(rid, full, raw)
        for rid, cat, data in outbox:
            self.bus.publish(rid, cat, data, tick)

    def _replan_phase(self, tick: int, order: list[int], planning: list) -> None:
        due = [rid for rid in order if self.agents[rid].needs_replan(tick)]

        def solve(rid: int):
            return rid, self.agents[rid].replan(tick)

        if self.workers >= 2 and len(due) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(solve, due))
        else:
            results = [solve(rid) for rid in due]
        for rid, stats in results:
            planning.append(
                [
                    float(tick),
                    float(rid),
                    float(stats.round_index),
                    float(stats.n_supervoxels),
                    float(stats.n_views),
                    float(stats.n_clusters),
                    stats.total_ms,
                ]
            )
            frame = self.agents[rid].route_frame(tick)
            if frame is not None:
                self.bus.publish(rid, CAT_ROUTE, frame, tick)

    def _movement_phase(self, tick: int, dt: float) -> None:
        order = sorted(self.agents)
        for rid in order:
            self.agents[rid].compute_hold()
        snapshot = {rid: self.agents[rid].position.copy() for rid in order}
        for rid in order:
            agent = self.agents[rid]
            proposal = agent.propose_step(dt)
            if proposal is None:
                if agent.holding and agent.cursor < len(agent.waypoints):
                    agent.note_blocked(tick)
                else:
                    agent.note_moving()
                continue
            proposal[2] = float(
                terrain_height(self.world, proposal[None, :2])[0]
            )
            others = [
                (snapshot[other], self.agents[other].species.body_radius)
                for other in order
                if other != rid
            ]
            if proximity_stop(
                agent.position, proposal, others, agent.species.body_radius
            ):
                agent.note_blocked(tick)
                continue
            agent.commit_position(proposal, tick)
            agent.note_moving()

    # ---------- main loop ----------

    def run(self, max_time_s: Optional[float] = None) -> SimResult:
        sim = self.config.sim
        dt = sim.tick_dt
        horizon = max_time_s if max_time_s is not None else sim.max_time_s
        max_ticks = int(round(horizon / dt))
        order = sorted(self.agents)
        n = len(order)

        metrics: list[list[float]] = []
        planning: list[list[float]] = []
        trajectories: dict[int, list[np.ndarray]] = {rid: [] for rid in order}
        min_pairwise = np.inf
        quiet_periods = 0
        tick = 0

        for tick in range(max_ticks + 1):
            for rid in order:
                frames = self.bus.collect(rid, tick)
                if frames:
                    self.agents[rid].absorb_frames(frames, tick)

            boundary = tick % self.comm_ticks == 0
            if boundary:
                self._comm_phase(tick, order)
                self._replan_phase(tick, order, planning)
                self.tracker.update(self.agents)
                if all(self.agents[rid].finished for rid in order):
                    quiet_periods += 1
                else:
                    quiet_periods = 0

            self._movement_phase(tick, dt)

            if n > 1:
                pos = np.array([self.agents[rid].position[:2] for rid in order])
                diff = pos[:, None, :] - pos[None, :, :]
                d = np.sqrt((diff**2).sum(axis=2))
                d[np.arange(n), np.arange(n)] = np.inf
                min_pairwise = min(min_pairwise, float(d.min()))

            row = [float(tick), tick * dt, self.tracker.completeness]
            row.append(min_pairwise if np.isfinite(min_pairwise) else -1.0)
            contrib = self.tracker.contributions(order)
            row.extend(contrib[rid] for rid in order)
            for rid in order:
                row.extend(self.agents[rid].position.tolist())
            for cat in CATEGORY_NAMES:
                row.append(self.bus.category_bytes(cat) / n)
            metrics.append(row)
            for rid in order:
                trajectories[rid].append(self.agents[rid].position.copy())

            if quiet_periods >= 2:
                break

        plan_ms = [row[-1] for row in planning]
        timeout_ticks = int(round(self.config.planner.route_timeout_s / dt))
        unresolved = sum(
            1
            for rid in order
            if not self.agents[rid].finished
            and self.agents[rid].blocked_since is not None
            and tick - self.agents[rid].last_progress_tick >= timeout_ticks
        )
        return SimResult(
            scenario=self.world.name,
            variant=self.variant,
            seed=self.seed,
            ticks=tick,
            sim_time_s=tick * dt,
            completeness=self.tracker.completeness,
            contributions=self.tracker.contributions(order),
            metrics_header=list(self.metrics_header),
            metrics=metrics,
            planning_header=list(self.planning_header),
            planning=planning,
            trajectories={
                rid: np.array(path) for rid, path in trajectories.items()
            },
            travelled_m={rid: self.agents[rid].travelled_m for rid in order},
            bytes_by_category={
                name: self.bus.category_bytes(cat)
                for cat, name in CATEGORY_NAMES.items()
            },
            map_increment_bytes=self.bus.category_bytes(CAT_MAP),
            full_policy_bytes=sum(self.bus.full_policy_bytes.values()),
            raw_policy_bytes=sum(self.bus.raw_policy_bytes.values()),
            deadlocks_total=sum(self.agents[rid].deadlock_events for rid in order),
            deadlocks_unresolved=unresolved,
            min_pairwise_m=float(min_pairwise) if np.isfinite(min_pairwise) else -1.0,
            table_hashes={rid: self.agents[rid].svmap.table_hash() for rid in order},
            planning_ms_mean=float(np.mean(plan_ms)) if plan_ms else 0.0,
            planning_ms_max=float(np.max(plan_ms)) if plan_ms else 0.0,
            unreachable_clusters=sum(
                self.agents[rid].unreachable_clusters for rid in order
            ),
        )


def run_scenario(
    world: ScenarioWorld,
    config: StackConfig,
    seed: int,
    variant: str = "full",
    workers: int = 0,
    max_time_s: Optional[float] = None,
) -> SimResult:
    return Simulation(world, config, seed, variant, workers).run(max_time_s)
