import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexplore import config, supervoxels
from hexplore.perception import PerceptionMap
from hexplore.supervoxels import (
    NORMAL_UNDEFINED,
    SupervoxelRecord,
    SupervoxelMap,
    fuse_records,
    oct_decode,
    oct_encode,
    pack_key,
    unpack_key,
)


# ---------- key packing ----------

@given(st.tuples(*[st.integers(-(2**20), 2**20 - 1)] * 3))
def test_pack_unpack_roundtrip(cell):
    assert unpack_key(pack_key(cell)) == cell


def test_pack_rejects_overflow():
    with pytest.raises(ValueError):
        pack_key((2**20, 0, 0))
    with pytest.raises(ValueError):
        pack_key((0, 0, -(2**20) - 1))


def test_key_order_matches_cell_order():
    cells = [(-3, 5, 1), (0, 0, 0), (-3, 5, 2), (7, -2, 0), (0, -1, 9)]
    keys = [pack_key(c) for c in cells]
    by_key = sorted(keys, key=supervoxels.key_sort_value)
    assert [unpack_key(k) for k in by_key] == sorted(cells)


# ---------- octahedral normals ----------

unit_vectors = st.tuples(
    st.floats(-1, 1, allow_nan=False),
    st.floats(-1, 1, allow_nan=False),
    st.floats(-1, 1, allow_nan=False),
).filter(lambda v: 1e-3 < np.linalg.norm(v)).map(
    lambda v: tuple(np.asarray(v) / np.linalg.norm(v))
)


@given(unit_vectors)
@settings(max_examples=300)
def test_oct_roundtrip_angle_error(n):
    code = oct_encode(np.array(n))
    assert code != NORMAL_UNDEFINED
    back = oct_decode(code)
    dot = float(np.clip(np.dot(back, n), -1, 1))
    assert np.degrees(np.arccos(dot)) < 1.0


def test_oct_undefined_sentinel():
    assert oct_encode(None) == NORMAL_UNDEFINED
    assert oct_encode(np.array([np.nan, 0, 0])) == NORMAL_UNDEFINED
    assert oct_decode(NORMAL_UNDEFINED) is None


def test_oct_never_emits_sentinel_for_real_normals(rng):
    for _ in range(2000):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        assert oct_encode(v) != NORMAL_UNDEFINED


# ---------- record fusion ----------

def rec(key=1, center=(0.0, 0.0, 0.0), normal=(0, 0, 1), kind=0, covered=False,
        requirement=1, version=1):
    oct_ = oct_encode(np.asarray(normal, dtype=float)) if normal else NORMAL_UNDEFINED
    return SupervoxelRecord(
        key=key,
        center=tuple(np.asarray(center, dtype=np.float32).tolist()),
        normal_oct=oct_,
        kind=kind,
        covered=covered,
        requirement=requirement,
        version=version,
        updated_at=0,
    )


def test_fusion_covered_is_or_requirement_is_max():
    fused = fuse_records(
        [(0, rec(covered=False, requirement=1)), (1, rec(covered=True, requirement=2))]
    )
    assert fused.covered is True
    assert fused.requirement == 2


def test_fusion_highest_version_wins_center():
    fused = fuse_records(
        [
            (0, rec(center=(1, 0, 0), version=1)),
            (1, rec(center=(5, 0, 0), version=3)),
        ]
    )
    assert fused.center[0] == pytest.approx(5.0)
    assert fused.version == 3


def test_fusion_version_tie_prefers_smaller_sender():
    fused = fuse_records(
        [
            (2, rec(center=(9, 0, 0), version=2)),
            (1, rec(center=(4, 0, 0), version=2)),
        ]
    )
    assert fused.center[0] == pytest.approx(4.0)


@given(st.permutations(list(range(4))))
def test_fusion_is_order_independent(order):
    entries = [
        (0, rec(center=(0, 0, 0), normal=(0, 0, 1), covered=False, version=2)),
        (1, rec(center=(1, 0, 0), normal=(0.1, 0, 0.99), covered=True, version=1)),
        (2, rec(center=(2, 0, 0), normal=(0, 0.1, 0.99), requirement=3, version=2)),
        (3, rec(center=(3, 0, 0), normal=None, version=1)),
    ]
    base = fuse_records(entries)
    shuffled = fuse_records([entries[i] for i in order])
    np.testing.assert_array_equal(shuffled.center, base.center)
    assert shuffled.covered == base.covered
    assert shuffled.requirement == base.requirement
    assert shuffled.version == base.version
    np.testing.assert_allclose(shuffled.normal, base.normal, atol=1e-6)


def test_fusion_opposing_normals_fall_back_deterministically():
    entries = [
        (1, rec(normal=(0, 0, 1))),
        (0, rec(normal=(0, 0, -1))),
    ]
    fused = fuse_records(entries)
    # sum cancels: smallest sender's normal is the tiebreak
    np.testing.assert_allclose(fused.normal, oct_decode(oct_encode((0, 0, -1))), atol=1e-6)


# ---------- segmentation ----------

def seeded_map(rng, n=2000):
    params = config.PlannerParams()
    pm = PerceptionMap(
        np.array([0.0, 0.0, 0.0]),
        np.array([12.0, 12.0, 6.0]),
        0.5,
        params,
        config.DEFAULT_SPECIES,
        coverage_range=10.0,
    )
    pts = np.column_stack(
        [
            rng.uniform(1.0, 11.0, n),
            rng.uniform(1.0, 11.0, n),
            rng.normal(0.25, 0.05, n).clip(0.0, 0.45),
        ]
    )
    return pm, pts


def test_segmentation_deterministic_under_scan_order(rng):
    params = config.PlannerParams()
    pm1, pts = seeded_map(rng)
    pm2 = PerceptionMap(
        np.array([0.0, 0.0, 0.0]),
        np.array([12.0, 12.0, 6.0]),
        0.5,
        params,
        config.DEFAULT_SPECIES,
        coverage_range=10.0,
    )
    sensor = np.array([6.0, 6.0, 3.0])
    pm1.integrate_scan(pts, sensor)
    perm = rng.permutation(len(pts))
    pm2.integrate_scan(pts[perm], sensor)

    a = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=0)
    b = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=0)
    a.segment(pm1, tick=0)
    b.segment(pm2, tick=0)
    assert a.table_hash() == b.table_hash()
    assert a.edges() == b.edges()


def test_segmentation_covers_all_occupied(rng):
    params = config.PlannerParams()
    pm, pts = seeded_map(rng)
    pm.integrate_scan(pts, np.array([6.0, 6.0, 3.0]))
    sm = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=0)
    sm.segment(pm, tick=0)
    member_total = sum(len(sm.members_of(k)) for k in sm.fused_table())
    assert member_total == len(pm.occupied_indices())


def test_seed_spacing_respects_lattice(rng):
    params = config.PlannerParams()
    pm, pts = seeded_map(rng)
    pm.integrate_scan(pts, np.array([6.0, 6.0, 3.0]))
    sm = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=0)
    sm.segment(pm, tick=0)
    centers = np.array([sv.center for sv in sm.fused_table().values()])
    # flat sheet, 10x10 m of 1 m lattice cells: at most ~121 regions
    assert 50 <= len(centers) <= 130


def test_version_bumps_only_on_wire_change(rng):
    params = config.PlannerParams()
    pm, pts = seeded_map(rng)
    pm.integrate_scan(pts, np.array([6.0, 6.0, 3.0]))
    sm = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=0)
    sm.segment(pm, tick=0)
    v0 = {k: r.version for k, r in sm.own_records().items()}
    # re-segmenting identical data must not bump anything
    sm.segment(pm, tick=1)
    for k, r in sm.own_records().items():
        assert r.version == v0[k], k


def test_ghost_records_survive_merges(rng):
    """Regions can merge as data accrues; their keys must not vanish."""
    params = config.PlannerParams()
    pm, pts = seeded_map(rng, n=400)  # sparse first pass: many small regions
    pm.integrate_scan(pts[:400], np.array([6.0, 6.0, 3.0]))
    sm = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=0)
    sm.segment(pm, tick=0)
    keys0 = set(sm.own_records())
    rng2 = np.random.default_rng(99)
    dense = np.column_stack(
        [
            rng2.uniform(1.0, 11.0, 4000),
            rng2.uniform(1.0, 11.0, 4000),
            rng2.normal(0.25, 0.05, 4000).clip(0.0, 0.45),
        ]
    )
    pm.integrate_scan(dense, np.array([6.0, 6.0, 3.0]))
    sm.segment(pm, tick=1)
    keys1 = set(sm.own_records())
    assert keys0 <= keys1, "keys must never disappear from the published table"


def test_absorb_rejects_stale_versions():
    params = config.PlannerParams()
    sm = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=0)
    fresh = rec(key=pack_key((1, 2, 3)), version=4)
    stale = rec(key=pack_key((1, 2, 3)), version=2)
    assert sm.absorb_record(1, fresh) is True
    assert sm.absorb_record(1, stale) is False
    assert sm.absorb_record(1, fresh) is False  # duplicate


def test_fused_tables_converge_across_agents(rng):
    """Same records absorbed in different orders give identical hashes."""
    params = config.PlannerParams()
    records = [
        (s, rec(key=pack_key((i, 0, 0)), center=(i, 0, s), version=s + 1))
        for i in range(5)
        for s in range(3)
    ]
    a = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=10)
    b = SupervoxelMap(params, config.DEFAULT_SPECIES, sender_id=11)
    for s, r in records:
        a.absorb_record(s, r)
    for s, r in reversed(records):
        b.absorb_record(s, r)
    assert a.table_hash() == b.table_hash()
