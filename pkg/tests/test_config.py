import pytest

from hexplore import config


def test_default_species_working_point():
    crawler, ranger = config.DEFAULT_SPECIES
    assert crawler.name == "crawler"
    assert crawler.traversal_level == 2
    assert crawler.observation_level == 1
    assert crawler.view_range == pytest.approx(10.0)
    assert crawler.coverage_range == pytest.approx(10.0)
    assert crawler.move_speed == pytest.approx(0.4)
    assert crawler.obs_rate == pytest.approx(10.0)
    assert ranger.traversal_level == 1
    assert ranger.observation_level == 2
    assert ranger.view_range == pytest.approx(27.0)
    assert ranger.move_speed == pytest.approx(0.5)
    assert ranger.obs_rate == pytest.approx(0.1)


def test_planner_defaults():
    p = config.PlannerParams()
    assert p.min_density == pytest.approx(0.3)
    assert p.max_obs_angle_deg == pytest.approx(45.0)
    assert p.facade_slope_deg == pytest.approx(45.0)
    assert (p.fov_min_deg, p.fov_max_deg) == (-45.0, 45.0)
    assert p.seed_interval == pytest.approx(1.0)
    assert p.seed_merge_radius == pytest.approx(0.2)
    assert p.cluster_radius == pytest.approx(5.0)
    assert p.route_timeout_s == pytest.approx(10.0)
    assert p.comm_period_s == pytest.approx(1.0)
    assert p.fitness_total_weight == pytest.approx(1.0)
    assert p.fitness_max_weight == pytest.approx(1.5)
    assert p.fitness_deviation_weight == pytest.approx(3.0)


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "stack.toml"
    path.write_text(
        """
[planner]
cluster_radius = 7.5

[ga]
population = 64
generations = 10

[sim]
tick_dt = 0.05
max_time_s = 30.0
"""
    )
    cfg = config.load_config(str(path))
    assert cfg.planner.cluster_radius == pytest.approx(7.5)
    assert cfg.planner.min_density == pytest.approx(0.3)  # untouched default
    assert cfg.ga.population == 64
    assert cfg.sim.tick_dt == pytest.approx(0.05)


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[planner]\nnot_a_real_knob = 1\n")
    with pytest.raises(ValueError, match="not_a_real_knob"):
        config.load_config(str(path))


def test_flatten_capabilities_takes_team_minima():
    flat = config.flatten_capabilities(config.DEFAULT_SPECIES)
    crawler, ranger = config.DEFAULT_SPECIES
    lo_trav = min(crawler.traversal_level, ranger.traversal_level)
    lo_obs = min(crawler.observation_level, ranger.observation_level)
    lo_view = min(crawler.view_range, ranger.view_range)
    for sp in flat:
        assert sp.traversal_level == lo_trav
        assert sp.observation_level == lo_obs
        assert sp.view_range == pytest.approx(lo_view)
    # locomotion stays species-specific
    assert flat[0].move_speed == pytest.approx(crawler.move_speed)
    assert flat[1].move_speed == pytest.approx(ranger.move_speed)
