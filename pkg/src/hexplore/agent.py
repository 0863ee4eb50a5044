"""Per-robot autonomy: map keeping, planning rounds, route execution.

Each agent owns its perception grid, region map and routing graph, and
talks to teammates only through encoded frames.  A planning round runs
the whole pipeline on the agent's current fused map: group incomplete
regions into views, label and cluster them, allocate clusters across
the known team, then compress and order its own share into standpoint
walks.  Every agent solves the same allocation problem from its own
map copy; the shared reference solution keeps those answers aligned
while maps still differ.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .assignment import (
    AssignmentProblem,
    GaResult,
    evolve,
    select_reference,
)
from .comms import (
    CAT_MAP,
    CAT_PATH,
    CAT_POSE,
    CAT_ROUTE,
    EDGE_RECORD_BYTES,
    HEADER_BYTES,
    RAW_VOXEL_BYTES,
    SV_RECORD_BYTES,
    MapIncrement,
    PathFrame,
    PoseFrame,
    RouteFrame,
    decode,
    encode_map,
    encode_path,
    encode_pose,
    encode_route,
)
from .config import GaConfig, LABEL_ANY, PlannerParams, RobotSpecies, SimParams
from .perception import PerceptionMap
from .safety import SharedPath, decide_holds, stationary_obstacle, truncate_path
from .supervoxels import SupervoxelMap
from .topology import TopologyGraph, TopologyStore
from .tour import ClusterTour, plan_cluster_tour
from .views import ViewCluster, cluster_views, plan_views

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_hetero", "no_cluster", "no_mnss", "no_assign")

_ARRIVE_TOL = 0.3          # m, waypoint considered reached
_SPECIES_FLAT_NAME = "flded"


@dataclass
class Teammate:
    robot_id: int
    species_index: int
    position: np.ndarray
    yaw: float = 0.0
    finished: bool = False
    last_seen_tick: int = -1
    path: Optional[np.ndarray] = None
    route: Optional[RouteFrame] = None


@dataclass
class PlanStats:
    tick: int
    round_index: int
    n_supervoxels: int
    n_nodes: int
    n_views: int
    n_clusters: int
    n_own_clusters: int
    views_ms: float
    assign_ms: float
    tour_ms: float

    @property
    def total_ms(self) -> float:
        return self.views_ms + self.assign_ms + self.tour_ms


class ExplorerAgent:
    def __init__(
        self,
        robot_id: int,
        species: RobotSpecies,
        species_registry: tuple[RobotSpecies, ...],
        start: np.ndarray,
        bounds_min: np.ndarray,
        bounds_max: np.ndarray,
        params: PlannerParams,
        sim: SimParams,
        seed: int,
        variant: str = "full",
        difficulty_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        team: Sequence[tuple[int, str, np.ndarray]] = (),
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.robot_id = robot_id
        self.species = species
        self.registry = species_registry
        self.params = params
        self.sim = sim
        self.seed = seed
        self.variant = variant
        self.position = np.asarray(start, dtype=float).copy()
        self.yaw = 0.0
        self.pmap = PerceptionMap(
            bounds_min,
            bounds_max,
            sim.map_resolution,
            params,
            species_registry,
            coverage_range=species.coverage_range,
            difficulty_fn=difficulty_fn,
        )
        self.svmap = SupervoxelMap(params, species_registry, sender_id=robot_id)
        self.topo = TopologyStore(species_registry)
        self.graph: Optional[TopologyGraph] = None

        # team roster is mission briefing knowledge; poses refresh over
        # the bus from then on
        self.teammates: dict[int, Teammate] = {}
        for rid, name, pos in team:
            if rid == robot_id:
                continue
            idx = next(
                i for i, sp in enumerate(species_registry) if sp.name == name
            )
            self.teammates[rid] = Teammate(
                robot_id=rid,
                species_index=idx,
                position=np.asarray(pos, dtype=float).copy(),
            )

        # route execution
        self.waypoints: list[np.ndarray] = []
        self.stand_flags: list[bool] = []
        self.stand_targets: list[Optional[tuple[int, ...]]] = []
        self.cursor = 0
        self.awaiting_scan = False
        self.finished = False
        self.holding = False
        self.blocked_since: Optional[int] = None
        self.last_progress_tick = 0
        self.last_publish_tick = -1
        self.round_index = 0
        self.replan_requested = True          # first round runs immediately
        self.deadlock_events = 0
        self.travelled_m = 0.0
        self.plan_history: list[PlanStats] = []
        self.own_solution: Optional[
            dict[int, tuple[tuple[float, float, float], ...]]
        ] = None
        self.unreachable_clusters = 0
        self._scan_rng = np.random.default_rng(
            np.random.SeedSequence([seed, robot_id, 0xB0D1])
        )

    # ---------- identity helpers ----------

    @property
    def species_index(self) -> int:
        return next(
            i for i, sp in enumerate(self.registry) if sp.name == self.species.name
        )

    def eye_position(self) -> np.ndarray:
        return self.position + np.array([0.0, 0.0, self.sim.sensor_height])

    def teammate_bodies(self) -> list[tuple[np.ndarray, float]]:
        return [
            (tm.position, self.registry[tm.species_index].body_radius)
            for tm in self.teammates.values()
        ]

    # ---------- perception ----------

    def integrate_scan(self, points: np.ndarray, tick: int) -> set[int]:
        """Fold a scan into the grid and refresh regions; changed keys out."""
        updated = self.pmap.integrate_scan(points, self.eye_position())
        changed = self.svmap.resegment(self.pmap, updated, tick)
        self._prune_stale_stands()
        return changed

    def _prune_stale_stands(self) -> None:
        """Demote queued stops whose targets got covered in the meantime.

        Routes are planned once and walked for a long while; the sweep
        itself (and teammate scans arriving over the bus) often covers a
        stop's targets before the robot gets there.  Dropping the pause
        keeps the walk order but skips the pointless stand-and-scan.  A
        route whose every remaining stop is stale is cut short entirely.
        """
        if self.cursor >= len(self.waypoints):
            return
        table = self.svmap.fused_table()
        changed = False
        for i in range(self.cursor, len(self.waypoints)):
            if not self.stand_flags[i] or self.stand_targets[i] is None:
                continue
            if i == self.cursor and self.awaiting_scan:
                continue
            rec = None
            pending = False
            for key in self.stand_targets[i]:
                rec = table.get(key)
                if rec is not None and not rec.covered:
                    pending = True
                    break
            if pending:
                continue
            self.stand_flags[i] = False
            self.stand_targets[i] = None
            changed = True
        if not changed:
            return
        last = -1
        for i in range(len(self.waypoints) - 1, self.cursor - 1, -1):
            if self.stand_flags[i]:
                last = i
                break
        if last < 0:
            self.waypoints = []
            self.stand_flags = []
            self.stand_targets = []
            self.cursor = 0
            self.awaiting_scan = False
            self.replan_requested = True
        else:
            del self.waypoints[last + 1:]
            del self.stand_flags[last + 1:]
            del self.stand_targets[last + 1:]

    # ---------- communication ----------

    def absorb_frames(self, frames: Sequence[tuple[int, int, bytes]], tick: int) -> None:
        """Apply decoded bus traffic; unknown senders are adopted."""
        for sender, category, data in frames:
            frame = decode(data)
            if isinstance(frame, PoseFrame):
                tm = self.teammates.get(sender)
                if tm is None:
                    tm = Teammate(
                        robot_id=sender,
                        species_index=frame.species_index,
                        position=np.array(frame.position),
                    )
                    self.teammates[sender] = tm
                was_finished = tm.finished
                tm.position = np.array(frame.position)
                tm.yaw = frame.yaw
                tm.species_index = frame.species_index
                tm.finished = frame.finished
                tm.last_seen_tick = frame.tick
                if frame.finished and not was_finished:
                    self.replan_requested = True
            elif isinstance(frame, MapIncrement):
                for rec in frame.records:
                    self.svmap.absorb_record(sender, rec)
                for ka, kb, _w in frame.edges:
                    self.svmap.absorb_edge(ka, kb)
            elif isinstance(frame, PathFrame):
                tm = self.teammates.get(sender)
                if tm is not None:
                    tm.path = np.array(frame.waypoints).reshape(-1, 3)
            elif isinstance(frame, RouteFrame):
                tm = self.teammates.get(sender)
                if tm is not None:
                    tm.route = frame

    def preview_path(self) -> np.ndarray:
        """Own upcoming positions within the sharing horizon."""
        ahead = [self.position] + self.waypoints[self.cursor :]
        return truncate_path(np.array(ahead), self.params.path_share_horizon)

    def comm_payloads(self, tick: int) -> list[tuple[int, bytes]]:
        """Frames for one broadcast window, map increment first."""
        out: list[tuple[int, bytes]] = []
        records = self.svmap.own_changed_in(self.last_publish_tick, tick)
        edge_pairs = self.svmap.edges_changed_in(self.last_publish_tick, tick)
        if records or edge_pairs:
            own = self.svmap.own_records()
            edges = []
            for ka, kb in edge_pairs:
                a, b = own.get(ka), own.get(kb)
                w = (
                    float(np.linalg.norm(np.subtract(a.center, b.center)))
                    if a and b
                    else 0.0
                )
                edges.append((ka, kb, w))
            inc = MapIncrement(
                sender=self.robot_id,
                window_end=tick,
                records=tuple(records),
                edges=tuple(edges),
            )
            out.append((CAT_MAP, encode_map(inc)))
        self.last_publish_tick = tick
        out.append(
            (
                CAT_POSE,
                encode_pose(
                    PoseFrame(
                        sender=self.robot_id,
                        tick=tick,
                        position=tuple(self.position.tolist()),
                        yaw=self.yaw,
                        finished=self.finished,
                        species_index=self.species_index,
                    )
                ),
            )
        )
        preview = self.preview_path()
        out.append(
            (
                CAT_PATH,
                encode_path(
                    PathFrame(
                        sender=self.robot_id,
                        tick=tick,
                        waypoints=tuple(tuple(p.tolist()) for p in preview),
                    )
                ),
            )
        )
        return out

    def policy_costs(self) -> tuple[int, int]:
        """Bytes a full-table resend and a raw voxel dump would cost now."""
        own = self.svmap.own_records()
        n_edges = len(self.svmap.own_edges)
        full = HEADER_BYTES + len(own) * SV_RECORD_BYTES + n_edges * EDGE_RECORD_BYTES
        raw = HEADER_BYTES + len(self.pmap.occupied_indices()) * RAW_VOXEL_BYTES
        return full, raw

    # ---------- planning ----------

    def needs_replan(self, tick: int) -> bool:
        if self.replan_requested:
            return True
        timeout_ticks = int(round(self.params.route_timeout_s / self.sim.tick_dt))
        return tick - self.last_progress_tick >= timeout_ticks

    def _route_candidates(
        self, graph: TopologyGraph
    ) -> dict[int, dict[int, np.ndarray]]:
        """Full solutions available as references, keyed by sender."""
        candidates: dict[int, dict[int, np.ndarray]] = {}
        if self.own_solution is not None:
            candidates[self.robot_id] = {
                rid: np.array(seq).reshape(-1, 3)
                for rid, seq in self.own_solution.items()
            }
        for tm in self.teammates.values():
            if tm.route is not None:
                candidates[tm.robot_id] = {
                    rid: np.array(seq).reshape(-1, 3)
                    for rid, seq in tm.route.sequences
                }
        return candidates

    def _reference_solution(
        self, graph: TopologyGraph
    ) -> Optional[dict[int, np.ndarray]]:
        """Pick the candidate whose worst route is shortest on my graph."""
        candidates = self._route_candidates(graph)
        if not candidates:
            return None
        robots = self._robot_states()
        lengths: dict[int, float] = {}
        for sender, solution in candidates.items():
            worst = 0.0
            for rid, centers in solution.items():
                state = robots.get(rid)
                if state is None or len(centers) == 0:
                    continue
                s_idx, pos = state
                length = 0.0
                prev = graph.nearest_node(pos)
                for c in centers:
                    node = graph.nearest_node(c)
                    if prev is not None and node is not None:
                        d = graph.distance(prev, node, s_idx)
                        if np.isfinite(d):
                            length += d
                    prev = node
                worst = max(worst, length)
            lengths[sender] = worst
        pick = select_reference(lengths)
        return candidates[pick] if pick is not None else None

    def _robot_states(self) -> dict[int, tuple[int, np.ndarray]]:
        """Known team: species index and last position, self included."""
        out = {self.robot_id: (self.species_index, self.position)}
        for tm in self.teammates.values():
            out[tm.robot_id] = (tm.species_index, tm.position)
        return out

    def _build_problem(
        self,
        clusters: list[ViewCluster],
        graph: TopologyGraph,
    ) -> tuple[AssignmentProblem, list[int]]:
        robots = self._robot_states()
        ids = sorted(robots)
        n, c = len(ids), len(clusters)
        delta = np.full((n, c), np.inf)
        transitions = np.full((n, c + 1, c), np.inf)
        anchor_idx = [
            graph.index.get(cl.anchor_key) if cl.anchor_key is not None else None
            for cl in clusters
        ]
        for r, rid in enumerate(ids):
            s_idx, pos = robots[rid]
            sp = self.registry[s_idx]
            start = graph.nearest_node(pos)
            start_i = graph.index.get(start) if start is not None else None
            for j, cl in enumerate(clusters):
                if cl.label not in (LABEL_ANY, sp.name):
                    continue
                aj = anchor_idx[j]
                if aj is None or start_i is None:
                    continue
                d0 = float(graph.dist[s_idx, start_i, aj])
                if not np.isfinite(d0):
                    continue          # anchor sits on an unbridged island
                # serve the reachable part of a cluster now; views cut
                # off by map gaps resurface in a later round
                walk = 0.0
                served = 0
                for v in cl.views:
                    vi = graph.index.get(v.node_key)
                    if vi is None:
                        continue
                    d = float(graph.dist[s_idx, vi, aj])
                    if not np.isfinite(d):
                        continue
                    walk += d
                    served += 1
                if served == 0:
                    continue
                delta[r, j] = walk / sp.move_speed + served / sp.obs_rate
                transitions[r, c, j] = d0 / sp.move_speed
                for i2, cl2 in enumerate(clusters):
                    ai = anchor_idx[i2]
                    if ai is None:
                        continue
                    d = float(graph.dist[s_idx, ai, aj])
                    transitions[r, i2, j] = d / sp.move_speed
        problem = AssignmentProblem(
            delta=delta,
            transitions=transitions,
            labels=[cl.label for cl in clusters],
            species_of_robot=[self.registry[robots[rid][0]].name for rid in ids],
            centers=np.array([cl.center for cl in clusters]).reshape(-1, 3),
        )
        return problem, ids

    def _voronoi_routes(
        self, problem: AssignmentProblem, ids: list[int]
    ) -> tuple[tuple[int, ...], ...]:
        """Nearest-anchor ownership with a greedy visiting order."""
        n, c = problem.n_robots, problem.n_clusters
        owner = np.full(c, -1)
        for j in range(c):
            best = None
            for r in range(n):
                d = problem.transitions[r, c, j]
                if np.isfinite(d) and np.isfinite(problem.delta[r, j]):
                    if best is None or d < best[0]:
                        best = (d, r)
            if best is not None:
                owner[j] = best[1]
        routes = []
        for r in range(n):
            mine = [j for j in range(c) if owner[j] == r]
            seq: list[int] = []
            prev = c
            while mine:
                nxt = min(mine, key=lambda j: (problem.transitions[r, prev, j], j))
                seq.append(nxt)
                mine.remove(nxt)
                prev = nxt
            routes.append(tuple(seq))
        return tuple(routes)

    def _singleton_clusters(
        self, clusters: list[ViewCluster], graph: TopologyGraph
    ) -> list[ViewCluster]:
        singles = []
        for cl in clusters:
            for v in cl.views:
                center = np.array(v.eye)
                singles.append(
                    ViewCluster(
                        label=cl.label,
                        views=(v,),
                        center=center,
                        anchor_key=v.node_key,
                    )
                )
        return singles

    def replan(self, tick: int) -> PlanStats:
        """One full planning round; installs the new route."""
        self.replan_requested = False
        table = self.svmap.fused_table()
        edges = self.svmap.edges()
        self.graph = self.topo.rebuild(table, edges)
        graph = self.graph

        t0 = time.perf_counter()
        plan = plan_views(
            table, graph, self.params, self.registry, eye_height=self.sim.sensor_height
        )
        clusters = cluster_views(plan.views, graph, self.params, self.registry)
        if self.variant == "no_cluster":
            clusters = self._singleton_clusters(clusters, graph)
        t1 = time.perf_counter()

        problem, ids = self._build_problem(clusters, graph)
        me = ids.index(self.robot_id)
        if self.variant == "no_assign":
            routes = self._voronoi_routes(problem, ids)
            dropped = [
                j
                for j in range(problem.n_clusters)
                if all(j not in r for r in routes)
            ]
            own_route = routes[me]
        else:
            by_robot = self._reference_solution(graph)
            reference = (
                {
                    ids.index(rid): np.asarray(poly, dtype=float).reshape(-1, 3)
                    for rid, poly in by_robot.items()
                    if rid in ids
                }
                if by_robot is not None
                else None
            )
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, self.robot_id, self.round_index])
            )
            cfg = GaConfig(
                population=self.sim.ga_population,
                generations=self.sim.ga_generations,
            )
            result = evolve(problem, cfg, rng, self.params, reference)
            routes = result.best.routes
            dropped = result.dropped_clusters
            own_route = routes[me]
        self.unreachable_clusters += len(dropped)
        t2 = time.perf_counter()

        tours: list[ClusterTour] = []
        occ = None
        if own_route:
            from .views import OccupancyIndex

            occ = OccupancyIndex(table, self.params.seed_interval)
            start = graph.nearest_node(self.position)
            entry = start
            chain = [clusters[j] for j in own_route]
            for pos_i, cl in enumerate(chain):
                exit_key = (
                    chain[pos_i + 1].anchor_key
                    if pos_i + 1 < len(chain)
                    else cl.anchor_key
                )
                tour = plan_cluster_tour(
                    cl,
                    table,
                    graph,
                    occ,
                    self.params,
                    self.registry,
                    entry_key=entry,
                    exit_key=exit_key,
                    eye_height=self.sim.sensor_height,
                    minimize=self.variant not in ("no_mnss",),
                    order_species=self.species_index,
                )
                if tour.stands:
                    entry = tour.stands[-1].node_key
                tours.append(tour)
        t3 = time.perf_counter()

        self._install_route(tours, graph, tick)
        if not self.waypoints:
            self._frontier_route(problem, me, clusters, graph)
        self._remember_solution(routes, ids, problem, clusters)
        self.finished = not self.waypoints
        self.round_index += 1
        stats = PlanStats(
            tick=tick,
            round_index=self.round_index - 1,
            n_supervoxels=len(table),
            n_nodes=len(graph.keys),
            n_views=len(plan.views),
            n_clusters=len(clusters),
            n_own_clusters=len(own_route),
            views_ms=(t1 - t0) * 1e3,
            assign_ms=(t2 - t1) * 1e3,
            tour_ms=(t3 - t2) * 1e3,
        )
        self.plan_history.append(stats)
        self.last_progress_tick = tick
        return stats

    def _remember_solution(self, routes, ids, problem, clusters) -> None:
        solution: dict[int, tuple[tuple[float, float, float], ...]] = {}
        for r, rid in enumerate(ids):
            centers = tuple(
                tuple(float(x) for x in clusters[j].center) for j in routes[r]
            )
            solution[rid] = centers
        self.own_solution = solution

    def _frontier_route(
        self,
        problem: AssignmentProblem,
        row: int,
        clusters: list[ViewCluster],
        graph: TopologyGraph,
    ) -> None:
        """March toward work the map cannot route to yet.

        Early maps split into islands around each robot; walking to the
        reachable node closest to a cut-off cluster extends the map
        until a route exists.  Only label-eligible clusters pull.
        """
        s_idx = self.species_index
        start = graph.nearest_node(self.position)
        if start is None:
            return
        si = graph.index[start]
        reach = np.isfinite(graph.dist[s_idx, si]) & (
            graph.requirements <= self.species.traversal_level
        )
        nodes = np.flatnonzero(reach)
        if len(nodes) == 0:
            return
        pulls = sorted(
            (
                float(np.linalg.norm(np.asarray(cl.center)[:2] - self.position[:2])),
                j,
            )
            for j, cl in enumerate(clusters)
            if cl.label in (LABEL_ANY, self.species.name)
            and not np.isfinite(problem.delta[row, j])
        )
        for _, j in pulls:
            center = np.asarray(clusters[j].center)
            d2 = ((graph.centers[nodes] - center[None, :]) ** 2).sum(axis=1)
            best = int(nodes[int(np.argmin(d2))])
            if best == si:
                continue          # already as close as the map allows
            hop = graph.path(start, int(graph.keys[best]), s_idx)
            if len(hop) <= 1:
                continue
            for key in hop[1:]:
                self.waypoints.append(graph.centers[graph.index[key]].copy())
                self.stand_flags.append(False)
                self.stand_targets.append(None)
            self.stand_flags[-1] = True
            return

    def route_frame(self, tick: int) -> Optional[bytes]:
        if self.own_solution is None or self.variant == "no_assign":
            return None
        frame = RouteFrame(
            sender=self.robot_id,
            tick=tick,
            sequences=tuple(sorted(self.own_solution.items())),
        )
        return encode_route(frame)

    def _install_route(
        self, tours: list[ClusterTour], graph: TopologyGraph, tick: int
    ) -> None:
        """Expand standpoint hops into walkable waypoints."""
        self.waypoints = []
        self.stand_flags = []
        self.stand_targets = []
        self.cursor = 0
        self.awaiting_scan = False
        obstacles = [
            stationary_obstacle(tm.position, self.registry[tm.species_index].body_radius,
                                self.species.body_radius + 0.2)
            for tm in self.teammates.values()
            if tm.finished
        ]
        prev = graph.nearest_node(self.position)
        for tour in tours:
            for stand in tour.stands:
                if prev is None:
                    break
                hop = graph.path(prev, stand.node_key, self.species_index)
                if obstacles and hop and self._hop_blocked(hop, graph, obstacles):
                    hop = graph.route_avoiding(
                        prev, stand.node_key, self.species_index, obstacles
                    )
                if not hop:
                    continue          # unreachable; the next round retries
                for key in hop[1:]:
                    self.waypoints.append(graph.centers[graph.index[key]].copy())
                    self.stand_flags.append(False)
                    self.stand_targets.append(None)
                if len(hop) == 1 and prev == stand.node_key:
                    # standing on it already; still needs the stop
                    self.waypoints.append(graph.centers[graph.index[stand.node_key]].copy())
                    self.stand_flags.append(True)
                    self.stand_targets.append(tuple(stand.targets))
                elif self.waypoints:
                    self.stand_flags[-1] = True
                    self.stand_targets[-1] = tuple(stand.targets)
                prev = stand.node_key

    @staticmethod
    def _hop_blocked(
        hop: list[int], graph: TopologyGraph, obstacles: list[np.ndarray]
    ) -> bool:
        """True when a straight hop passes through any parked-robot box."""
        pts = np.array([graph.centers[graph.index[k]] for k in hop])
        if len(pts) > 1:
            mids = 0.5 * (pts[:-1] + pts[1:])
            pts = np.vstack([pts, mids])
        for box in obstacles:
            inside = np.all((pts >= box[0]) & (pts <= box[1]), axis=1)
            if bool(inside.any()):
                return True
        return False

    # ---------- execution ----------

    def compute_hold(self) -> bool:
        """Planning-level yield from everyone's latest path previews."""
        if self.cursor >= len(self.waypoints):
            self.holding = False
            return False
        paths = [
            SharedPath(
                robot_id=self.robot_id,
                radius=self.species.body_radius,
                speed=self.species.move_speed,
                points=self.preview_path(),
            )
        ]
        for tm in self.teammates.values():
            if tm.path is None:
                continue
            sp = self.registry[tm.species_index]
            paths.append(
                SharedPath(
                    robot_id=tm.robot_id,
                    radius=sp.body_radius,
                    speed=sp.move_speed,
                    points=tm.path,
                )
            )
        holds, _ = decide_holds(paths)
        self.holding = self.robot_id in holds
        return self.holding

    def propose_step(self, dt: float) -> Optional[np.ndarray]:
        """Next position along the route, None when idle this tick.

        Steering is planar; the harness pins z to the terrain after
        the step is accepted.
        """
        if self.holding or self.awaiting_scan or self.cursor >= len(self.waypoints):
            return None
        target = self.waypoints[self.cursor]
        span = target[:2] - self.position[:2]
        dist = float(np.linalg.norm(span))
        step = self.species.move_speed * dt
        new = self.position.copy()
        if dist <= step:
            new[:2] = target[:2]
        else:
            new[:2] += span / dist * step
        return new

    def commit_position(self, new_pos: np.ndarray, tick: int) -> None:
        moved = float(np.linalg.norm(new_pos - self.position))
        self.travelled_m += moved
        heading = new_pos[:2] - self.position[:2]
        if abs(heading[0]) + abs(heading[1]) > 1e-9:
            self.yaw = float(np.arctan2(heading[1], heading[0]))
        self.position = np.asarray(new_pos, dtype=float).copy()
        if self.cursor < len(self.waypoints):
            target = self.waypoints[self.cursor]
            if float(np.linalg.norm(target[:2] - self.position[:2])) <= _ARRIVE_TOL:
                if self.stand_flags[self.cursor]:
                    self.awaiting_scan = True
                else:
                    self.cursor += 1
                self.last_progress_tick = tick

    def on_scan_complete(self, tick: int) -> None:
        """A standpoint finishes on the first scan taken while on it."""
        if self.awaiting_scan:
            self.awaiting_scan = False
            self.cursor += 1
            self.last_progress_tick = tick
        if self.cursor >= len(self.waypoints) and self.waypoints:
            # route exhausted: raise the flag so the team replans
            self.waypoints = []
            self.stand_flags = []
            self.stand_targets = []
            self.cursor = 0
            self.replan_requested = True

    def note_blocked(self, tick: int) -> None:
        """Track involuntary stalls; a long one counts as a deadlock."""
        if self.blocked_since is None:
            self.blocked_since = tick
            return
        timeout_ticks = int(round(self.params.route_timeout_s / self.sim.tick_dt))
        if tick - self.blocked_since >= timeout_ticks:
            self.deadlock_events += 1
            self.replan_requested = True
            self.blocked_since = None

    def note_moving(self) -> None:
        self.blocked_since = None
