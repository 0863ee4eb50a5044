"""End-to-end harness runs on small synthetic worlds.

One short run is shared across assertions; determinism gets its own
pair of runs.  Worlds here are deliberately tiny so the whole module
stays in tens of seconds.
"""

import dataclasses

import numpy as np
import pytest

from hexplore.config import DEFAULT_SPECIES, StackConfig
from hexplore.simulation import Simulation
from hexplore.world import RobotSpec, ScenarioWorld


def make_flat(half=5.0, cell=1.0):
    n = int(round(2 * half / cell)) + 1
    return ScenarioWorld(
        bounds_min=np.array([-half, -half, -1.0]),
        bounds_max=np.array([half, half, 4.0]),
        cell_size=cell,
        heights=np.zeros((n, n)),
        boxes=[],
        patches=[],
        species=DEFAULT_SPECIES,
        robots=[
            RobotSpec(0, "crawler", np.array([-3.0, -3.0, 0.0])),
            RobotSpec(1, "ranger", np.array([3.0, 3.0, 0.0])),
        ],
        name="flat-test",
    )


def small_config(**sim_overrides):
    cfg = StackConfig()
    sim = dataclasses.replace(
        cfg.sim, ga_population=12, ga_generations=10, **sim_overrides
    )
    return dataclasses.replace(cfg, sim=sim)


@pytest.fixture(scope="module")
def short_run():
    sim = Simulation(make_flat(), small_config(), seed=11)
    return sim.run(max_time_s=40.0)


class TestRunShape:
    def test_metrics_table_rectangular(self, short_run):
        res = short_run
        assert res.metrics, "no metrics rows recorded"
        width = len(res.metrics_header)
        assert all(len(row) == width for row in res.metrics)

    def test_planning_table_rectangular(self, short_run):
        res = short_run
        assert res.planning, "nobody ever planned"
        width = len(res.planning_header)
        assert all(len(row) == width for row in res.planning)

    def test_progress_made(self, short_run):
        res = short_run
        assert 0.0 < res.completeness <= 1.0
        assert all(v > 0 for v in res.travelled_m.values())
        # contributions partition the team total
        assert sum(res.contributions.values()) == pytest.approx(res.completeness)

    def test_completeness_monotone(self, short_run):
        res = short_run
        col = res.metrics_header.index("completeness")
        series = [row[col] for row in res.metrics]
        assert all(b >= a for a, b in zip(series, series[1:]))

    def test_trajectories_cover_run(self, short_run):
        res = short_run
        for rid, track in res.trajectories.items():
            assert track.shape[1] == 3
            assert len(track) == len(res.metrics)

    def test_bus_accounting_nonzero(self, short_run):
        res = short_run
        assert res.bytes_by_category["pose"] > 0
        assert res.bytes_by_category["map"] > 0
        assert res.map_increment_bytes == res.bytes_by_category["map"]
        assert res.full_policy_bytes > res.map_increment_bytes
        assert res.raw_policy_bytes > res.map_increment_bytes

    def test_robots_keep_distance(self, short_run):
        # body radii sum plus margin; the harness must never let them touch
        assert short_run.min_pairwise_m >= 0.8


class TestDeterminism:
    def test_bit_identical_rerun(self):
        def go():
            sim = Simulation(make_flat(), small_config(), seed=23)
            return sim.run(max_time_s=25.0)

        a, b = go(), go()
        assert a.metrics == b.metrics
        assert a.table_hashes == b.table_hashes
        assert a.travelled_m == b.travelled_m
        for rid in a.trajectories:
            assert np.array_equal(a.trajectories[rid], b.trajectories[rid])

    def test_seed_changes_outcome(self):
        runs = []
        for seed in (5, 6):
            sim = Simulation(make_flat(), small_config(), seed=seed)
            runs.append(sim.run(max_time_s=25.0))
        # route draws differ, so the robots should not shadow each other
        assert (
            runs[0].travelled_m != runs[1].travelled_m
            or runs[0].metrics != runs[1].metrics
        )

    def test_worker_threads_do_not_change_results(self):
        seq = Simulation(make_flat(), small_config(), seed=23).run(max_time_s=20.0)
        par = Simulation(make_flat(), small_config(), seed=23, workers=2).run(
            max_time_s=20.0
        )
        assert seq.metrics == par.metrics
        assert seq.table_hashes == par.table_hashes


class TestVariants:
    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            Simulation(make_flat(), small_config(), seed=1, variant="bogus")

    def test_capability_flattening(self):
        full = Simulation(make_flat(), small_config(), seed=1)
        flat = Simulation(make_flat(), small_config(), seed=1, variant="no_hetero")
        full_views = {sp.view_range for sp in full.registry}
        flat_views = {sp.view_range for sp in flat.registry}
        assert len(full_views) == 2
        assert flat_views == {min(full_views)}
        flat_trav = {sp.traversal_level for sp in flat.registry}
        assert flat_trav == {min(sp.traversal_level for sp in full.registry)}

    @pytest.mark.parametrize("variant", ["no_cluster", "no_mnss", "no_assign"])
    def test_ablations_still_explore(self, variant):
        sim = Simulation(make_flat(), small_config(), seed=11, variant=variant)
        res = sim.run(max_time_s=25.0)
        assert res.completeness > 0.1
        assert res.deadlocks_unresolved == 0


class TestTermination:
    def test_finishes_small_world_early(self):
        world = make_flat(half=4.0)
        sim = Simulation(world, small_config(), seed=3)
        res = sim.run(max_time_s=400.0)
        assert res.sim_time_s < 400.0, "run never settled"
        assert res.completeness >= 0.95
        assert res.deadlocks_unresolved == 0
