import numpy as np
import pytest

from hexplore import config
from hexplore.supervoxels import FusedSupervoxel, KIND_FACADE, KIND_GROUND, pack_key
from hexplore.topology import StaleEpochError, TopologyStore, all_pairs_shortest

from oracles import heap_dijkstra


def random_weights(rng, n, p_edge=0.3, scale=10.0):
    w = np.full((n, n), np.inf)
    np.fill_diagonal(w, 0.0)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_edge:
                w[i, j] = w[j, i] = rng.uniform(0.1, scale)
    return w


def test_floyd_warshall_matches_dijkstra_oracle(rng):
    for trial in range(8):
        n = int(rng.integers(4, 40))
        w = random_weights(rng, n)
        dist, pred = all_pairs_shortest(w)
        for src in range(n):
            ref = heap_dijkstra(w, src)
            np.testing.assert_allclose(dist[src], ref, atol=1e-9)


def test_floyd_warshall_predecessors_reconstruct_paths(rng):
    n = 25
    w = random_weights(rng, n, p_edge=0.25)
    dist, pred = all_pairs_shortest(w)
    for i in range(n):
        for j in range(n):
            if i == j or not np.isfinite(dist[i, j]):
                continue
            # walk back and sum edge weights
            chain = [j]
            cur = j
            while cur != i:
                cur = int(pred[i, cur])
                assert cur >= 0
                chain.append(cur)
                assert len(chain) <= n
            total = sum(w[a, b] for a, b in zip(chain[1:], chain))
            assert total == pytest.approx(dist[i, j], abs=1e-9)


def test_floyd_warshall_stacked_slices(rng):
    w0 = random_weights(rng, 12)
    w1 = w0.copy()
    w1[3, :] = w1[:, 3] = np.inf  # node 3 blocked in slice 1
    np.fill_diagonal(w1, 0.0)
    dist, _ = all_pairs_shortest(np.stack([w0, w1]))
    for src in range(12):
        np.testing.assert_allclose(dist[0, src], heap_dijkstra(w0, src), atol=1e-9)
        np.testing.assert_allclose(dist[1, src], heap_dijkstra(w1, src), atol=1e-9)


# ---------- store over fused tables ----------

def grid_table(n_side, requirement=1, spacing=1.0, kind=KIND_GROUND):
    """n_side x n_side lattice of ground regions with 4-adjacency."""
    table = {}
    edges = set()
    for i in range(n_side):
        for j in range(n_side):
            key = pack_key((i, j, 0))
            table[key] = FusedSupervoxel(
                key=key,
                center=np.array([i * spacing, j * spacing, 0.0]),
                normal=np.array([0.0, 0.0, 1.0]),
                kind=kind,
                covered=False,
                requirement=requirement,
                version=1,
                member_count=1,
            )
            if i > 0:
                edges.add((pack_key((i - 1, j, 0)), key))
            if j > 0:
                edges.add((pack_key((i, j - 1, 0)), key))
    return table, edges


def test_store_builds_grid_distances():
    table, edges = grid_table(4)
    store = TopologyStore(config.DEFAULT_SPECIES)
    g = store.rebuild(table, edges)
    a = pack_key((0, 0, 0))
    b = pack_key((3, 3, 0))
    assert g.distance(a, b, "crawler") == pytest.approx(6.0)
    path = g.path(a, b, "crawler")
    assert path[0] == a and path[-1] == b
    assert len(path) == 7  # manhattan route on the lattice


def test_store_excludes_facades_and_infeasible():
    table, edges = grid_table(3)
    fkey = pack_key((9, 9, 0))
    table[fkey] = FusedSupervoxel(
        key=fkey, center=np.array([9.0, 9.0, 0.0]), normal=None,
        kind=KIND_FACADE, covered=False, requirement=1, version=1, member_count=1,
    )
    ikey = pack_key((8, 8, 0))
    table[ikey] = FusedSupervoxel(
        key=ikey, center=np.array([8.0, 8.0, 0.0]), normal=None,
        kind=KIND_GROUND, covered=False, requirement=config.INFEASIBLE,
        version=1, member_count=1,
    )
    store = TopologyStore(config.DEFAULT_SPECIES)
    g = store.rebuild(table, edges)
    assert not g.has_node(fkey)
    assert not g.has_node(ikey)


def test_species_capability_masks_distances():
    table, edges = grid_table(3, requirement=1)
    # make the center row require level 2: ranger (level 1) must detour
    for i in range(3):
        key = pack_key((i, 1, 0))
        sv = table[key]
        table[key] = FusedSupervoxel(
            key=sv.key, center=sv.center, normal=sv.normal, kind=sv.kind,
            covered=sv.covered, requirement=2, version=sv.version,
            member_count=sv.member_count,
        )
    store = TopologyStore(config.DEFAULT_SPECIES)
    g = store.rebuild(table, edges)
    a, b = pack_key((0, 0, 0)), pack_key((0, 2, 0))
    assert g.distance(a, b, "crawler") == pytest.approx(2.0)
    assert not np.isfinite(g.distance(a, b, "ranger"))  # row blocks the lattice


def test_incremental_repair_matches_full_rebuild(rng):
    """Grow a map node by node; repaired closures must equal fresh ones."""
    table, edges = grid_table(11)  # 121 nodes keeps changes under the 5% gate
    items = sorted(table)
    store_inc = TopologyStore(config.DEFAULT_SPECIES)
    # build everything except the last two nodes, then add them one at a time
    for cut in (len(items) - 2, len(items) - 1, len(items)):
        live = set(items[:cut])
        sub_table = {k: table[k] for k in live}
        sub_edges = {(a, b) for a, b in edges if a in live and b in live}
        g_inc = store_inc.rebuild(sub_table, sub_edges)
        fresh = TopologyStore(config.DEFAULT_SPECIES).rebuild(sub_table, sub_edges)
        np.testing.assert_allclose(g_inc.dist, fresh.dist, atol=1e-9)
        # predecessors may differ between equal-cost paths; check validity
        for s in range(len(config.DEFAULT_SPECIES)):
            for i in range(0, len(g_inc.keys), 7):
                for j in range(0, len(g_inc.keys), 5):
                    ki, kj = g_inc.keys[i], g_inc.keys[j]
                    p = g_inc.path(ki, kj, s)
                    if not np.isfinite(g_inc.dist[s, i, j]):
                        assert p == []
                        continue
                    assert p[0] == ki and p[-1] == kj
                    total = 0.0
                    for a, b in zip(p, p[1:]):
                        ia, ib = g_inc.index[a], g_inc.index[b]
                        assert np.isfinite(g_inc.weights[s, ia, ib])
                        total += g_inc.weights[s, ia, ib]
                    assert total == pytest.approx(g_inc.dist[s, i, j], abs=1e-6)
    assert store_inc.incremental_repairs >= 2


def test_repair_falls_back_on_removal():
    table, edges = grid_table(5)
    store = TopologyStore(config.DEFAULT_SPECIES)
    store.rebuild(table, edges)
    n_full = store.full_rebuilds
    dropped = pack_key((2, 2, 0))
    sub = {k: v for k, v in table.items() if k != dropped}
    sub_edges = {(a, b) for a, b in edges if dropped not in (a, b)}
    store.rebuild(sub, sub_edges)
    assert store.full_rebuilds == n_full + 1


def test_nearest_node_tie_breaks_by_cell():
    table, edges = grid_table(3)
    store = TopologyStore(config.DEFAULT_SPECIES)
    g = store.rebuild(table, edges)
    # equidistant between (0,0) and (1,0): the smaller cell wins
    key = g.nearest_node(np.array([0.5, 0.0, 0.0]))
    assert key == pack_key((0, 0, 0))


def test_route_avoiding_detours_around_box():
    table, edges = grid_table(5)
    store = TopologyStore(config.DEFAULT_SPECIES)
    g = store.rebuild(table, edges)
    a, b = pack_key((0, 2, 0)), pack_key((4, 2, 0))
    direct = g.path(a, b, "crawler")
    assert len(direct) == 5
    # block the middle column around y=2
    box = np.array([[1.5, 1.5, -1.0], [2.5, 2.5, 1.0]])
    detour = g.route_avoiding(a, b, "crawler", [box])
    assert detour[0] == a and detour[-1] == b
    blocked = {pack_key((2, 2, 0))}
    assert not blocked & set(detour)


def test_stale_epoch_guard():
    table, edges = grid_table(2)
    store = TopologyStore(config.DEFAULT_SPECIES)
    g = store.rebuild(table, edges)
    old_epoch = g.epoch
    store.rebuild(table, edges)
    with pytest.raises(StaleEpochError):
        store.graph.ensure_epoch(old_epoch)
