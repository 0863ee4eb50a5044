import numpy as np
import pytest

from hexplore import config
from hexplore.supervoxels import KIND_FACADE, KIND_GROUND, FusedSupervoxel, pack_key
from hexplore.topology import TopologyStore
from hexplore.views import (
    LABEL_ANY,
    VIEW_ARRIVAL,
    VIEW_REMOTE,
    OccupancyIndex,
    acceptance_geometry,
    cluster_views,
    label_views,
    plan_views,
    rays_clear,
    vis_score,
)


def sv(cell, center, kind=KIND_GROUND, covered=True, requirement=1, normal=(0, 0, 1)):
    return FusedSupervoxel(
        key=pack_key(cell),
        center=np.asarray(center, dtype=float),
        normal=None if normal is None else np.asarray(normal, dtype=float),
        kind=kind,
        covered=covered,
        requirement=requirement,
        version=1,
        member_count=4,
    )


def ground_strip(n, covered=True, y=0, z=0.0, requirement=1):
    """n ground regions along x with 4-adjacency edges."""
    table = {}
    edges = set()
    for i in range(n):
        cell = (i, y, int(z))
        table[pack_key(cell)] = sv(cell, (i * 1.0, y * 1.0, z),
                                   covered=covered, requirement=requirement)
        if i > 0:
            edges.add((pack_key((i - 1, y, int(z))), pack_key(cell)))
    return table, edges


def test_occupancy_owner_lookup():
    table = {
        pack_key((0, 0, 0)): sv((0, 0, 0), (0.0, 0.0, 0.0)),
        pack_key((5, 0, 0)): sv((5, 0, 0), (5.0, 0.0, 0.0)),
    }
    occ = OccupancyIndex(table, 1.0)
    pts = np.array([[0.0, 0.0, 0.0], [5.2, 0.1, 0.0], [2.5, 0.0, 0.0], [99.0, 0, 0]])
    owners = occ.owners(pts)
    assert owners[0] == pack_key((0, 0, 0))
    assert owners[1] == pack_key((5, 0, 0))
    assert owners[2] == -1
    assert owners[3] == -1


def test_occupancy_overlap_smaller_key_wins():
    a, b = (0, 0, 0), (1, 0, 0)
    table = {
        pack_key(a): sv(a, (0.45, 0.0, 0.0)),
        pack_key(b): sv(b, (0.55, 0.0, 0.0)),  # boxes overlap heavily
    }
    occ = OccupancyIndex(table, 1.0)
    owner = occ.owners(np.array([[0.5, 0.0, 0.0]]))[0]
    assert owner == min(pack_key(a), pack_key(b), key=lambda k: (0, k))  # both map here
    assert owner == pack_key(a)


def test_rays_blocked_by_intervening_region():
    wall_cell = (5, 0, 1)
    table = {
        pack_key(wall_cell): sv(wall_cell, (5.0, 0.0, 1.0), kind=KIND_FACADE,
                                normal=(-1, 0, 0)),
    }
    occ = OccupancyIndex(table, 1.0)
    eye = np.array([[0.0, 0.0, 1.0]])
    tgt = np.array([[10.0, 0.0, 1.0]])
    blocked = rays_clear(occ, eye, tgt, np.array([-5]), np.array([-6]), 0.5)
    assert not blocked[0]
    # the wall itself as target: its own box must not block the ray
    tgt2 = np.array([[5.0, 0.0, 1.0]])
    ok = rays_clear(occ, eye, tgt2, np.array([pack_key(wall_cell)]), np.array([-6]), 0.5)
    assert ok[0]
    # a sidestepped ray misses the box entirely
    ok2 = rays_clear(occ, np.array([[0.0, 5.0, 1.0]]), np.array([[10.0, 5.0, 1.0]]),
                     np.array([-5]), np.array([-6]), 0.5)
    assert ok2[0]


def test_acceptance_head_on_and_reversed():
    params = config.PlannerParams()
    eyes = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    targets = np.array([[5.0, 0.0, 1.0], [5.0, 0.0, 1.0]])
    normals = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    passes, inc, elev, dist = acceptance_geometry(eyes, targets, normals, params)
    assert passes[0] and not passes[1]
    assert inc[0] == pytest.approx(0.0, abs=1e-9)
    assert elev[0] == pytest.approx(0.0, abs=1e-9)
    assert dist[0] == pytest.approx(5.0)


def test_acceptance_elevation_fov():
    params = config.PlannerParams()
    eyes = np.zeros((2, 3))
    targets = np.array([[1.0, 0.0, 2.0], [2.0, 0.0, 1.0]])  # 63 deg up, 27 deg up
    normals = np.array([[-1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    passes, _, elev, _ = acceptance_geometry(eyes, targets, normals, params)
    assert not passes[0]  # above the vertical field of view
    assert passes[1]
    assert elev[1] == pytest.approx(np.degrees(np.arcsin(1 / np.sqrt(5))))


def test_vis_prefers_close_head_on():
    params = config.PlannerParams()
    close = vis_score(np.array([0.1]), np.array([3.0]), params)[0]
    far = vis_score(np.array([0.1]), np.array([20.0]), params)[0]
    slanted = vis_score(np.array([0.7]), np.array([3.0]), params)[0]
    assert close > far and close > slanted


def world_with_wall(wall_x=5.0, wall_z=1.0, n_ground=11, covered_ground=True):
    table, edges = ground_strip(n_ground, covered=covered_ground)
    wcell = (int(wall_x), 3, int(wall_z))
    table[pack_key(wcell)] = sv(
        wcell, (wall_x, 3.0, wall_z), kind=KIND_FACADE, covered=False,
        normal=(0, -1, 0),
    )
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    return table, graph, pack_key(wcell)


def test_plan_views_places_remote_view_for_facade():
    params = config.PlannerParams()
    table, graph, wall_key = world_with_wall()
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    remote = [v for v in plan.views if v.mode == VIEW_REMOTE]
    assert len(remote) == 1
    v = remote[0]
    assert v.primary == wall_key
    # best node stands close to the wall in x, walled off by the fov arc
    assert abs(v.eye[0] - 5.0) <= 3.0
    assert v.min_obs_level == 1  # close view: anyone may take it
    assert plan.unviewable == []


def test_plan_views_skips_covered():
    params = config.PlannerParams()
    table, edges = ground_strip(5, covered=True)
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    assert plan.views == []


def test_plan_views_arrival_for_uncovered_ground():
    params = config.PlannerParams()
    table, edges = ground_strip(5, covered=False)
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    arrivals = [v for v in plan.views if v.mode == VIEW_ARRIVAL]
    assert len(arrivals) == 5
    for v in arrivals:
        assert v.node_key == v.primary == v.targets[0]


def test_flat_ground_is_never_credited_remotely():
    """Incidence and the view-cone floor exclude each other on flat ground.

    Seeing level ground head-on enough needs a horizontal distance under
    the eye height, but then the sight line dips below the vertical
    field of view, so every flat walkable region must be an arrival.
    """
    params = config.PlannerParams()
    table, edges = ground_strip(11, covered=False)
    wcell = (5, 3, 1)
    table[pack_key(wcell)] = sv(wcell, (5.0, 3.0, 1.0), kind=KIND_FACADE,
                                covered=False, normal=(0, -1, 0))
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    remote = [v for v in plan.views if v.mode == VIEW_REMOTE]
    assert len(remote) == 1
    # only the standing node itself is credited, never line-of-sight ground
    assert set(remote[0].targets) == {remote[0].primary, remote[0].node_key}
    arrivals = {v.primary for v in plan.views if v.mode == VIEW_ARRIVAL}
    incomplete = {k for k, s in table.items() if not s.covered}
    assert incomplete == ({remote[0].primary, remote[0].node_key} | arrivals)


def test_remote_view_credits_its_standing_node():
    """Executing a view covers the incomplete region it stands on."""
    params = config.PlannerParams()
    table, edges = ground_strip(11, covered=True)
    wcell = (5, 3, 2)
    table[pack_key(wcell)] = sv(wcell, (5.0, 3.0, 2.0), kind=KIND_FACADE,
                                covered=False, normal=(0, -1, 0))
    # the closest standing spot to the wall is itself still incomplete
    bank = (5, 1, 0)
    table[pack_key(bank)] = sv(bank, (5.0, 1.5, 0.0), kind=KIND_GROUND,
                               covered=False)
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    remote = [v for v in plan.views if v.mode == VIEW_REMOTE]
    assert len(remote) == 1
    assert remote[0].node_key == pack_key(bank)
    assert pack_key(bank) in remote[0].targets
    # booked via the standing credit, so no separate arrival view
    assert all(v.primary != pack_key(bank) for v in plan.views if v.mode == VIEW_ARRIVAL)


def test_plan_views_reports_unviewable():
    params = config.PlannerParams()
    table, edges = ground_strip(11)
    # a facade fragment buried under terrain level: visible by nobody
    bcell = (5, 40, 0)
    table[pack_key(bcell)] = sv(bcell, (5.0, 40.0, 0.0), kind=KIND_FACADE,
                                covered=False, normal=(0, -1, 0))
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    assert pack_key(bcell) in plan.unviewable


def test_view_obs_level_follows_distance():
    """Targets past the short view range need the long-range species."""
    params = config.PlannerParams()
    table, edges = ground_strip(3)
    far_cell = (1, 15, 2)
    table[pack_key(far_cell)] = sv(far_cell, (1.0, 15.0, 2.0), kind=KIND_FACADE,
                                   covered=False, normal=(0, -1, 0))
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    remote = [v for v in plan.views if v.primary == pack_key(far_cell)]
    assert len(remote) == 1
    assert remote[0].min_obs_level == 2  # only the long-range observer
    groups = label_views(plan.views, graph, config.DEFAULT_SPECIES)
    assert any(v.primary == pack_key(far_cell) for v in groups.get("ranger", []))


def test_label_any_for_easy_views():
    params = config.PlannerParams()
    table, graph, wall_key = world_with_wall()
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    groups = label_views(plan.views, graph, config.DEFAULT_SPECIES)
    assert LABEL_ANY in groups
    assert all(v.min_obs_level == 1 for v in groups[LABEL_ANY])


def test_label_restricted_by_node_requirement():
    params = config.PlannerParams()
    table, edges = ground_strip(5, covered=False, requirement=2)
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    groups = label_views(plan.views, graph, config.DEFAULT_SPECIES)
    # level-2 ground: only the crawler can stand there
    assert set(groups) == {"crawler"}


def test_clusters_chain_within_radius():
    params = config.PlannerParams()
    table, edges = ground_strip(21, covered=False)
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    clusters = cluster_views(plan.views, graph, params, config.DEFAULT_SPECIES)
    # 21 views, 1 m apart, radius 5: chain absorption keeps them together
    assert len(clusters) == 1
    assert clusters[0].size == 21
    assert clusters[0].label == LABEL_ANY
    assert clusters[0].anchor_key in graph.index


def test_clusters_split_far_groups():
    params = config.PlannerParams()
    table_a, edges_a = ground_strip(3, covered=False)
    table_b, edges_b = ground_strip(3, covered=False, y=30)
    table = {**table_a, **table_b}
    edges = edges_a | edges_b
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)
    clusters = cluster_views(plan.views, graph, params, config.DEFAULT_SPECIES)
    assert len(clusters) == 2
    assert {c.size for c in clusters} == {3}


def test_clustering_deterministic_under_view_order(rng):
    params = config.PlannerParams()
    table, edges = ground_strip(12, covered=False)
    store = TopologyStore(config.DEFAULT_SPECIES)
    graph = store.rebuild(table, edges)
    plan = plan_views(table, graph, params, config.DEFAULT_SPECIES)

    def signature(clusters):
        return sorted(
            (c.label, tuple(sorted(v.primary for v in c.views)), c.anchor_key)
            for c in clusters
        )

    base = signature(cluster_views(plan.views, graph, params, config.DEFAULT_SPECIES))
    for _ in range(10):
        shuffled = list(plan.views)
        rng.shuffle(shuffled)
        got = signature(cluster_views(shuffled, graph, params, config.DEFAULT_SPECIES))
        assert got == base
