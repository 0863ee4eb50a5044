"""Shared configuration for the exploration stack.

Defaults mirror the reference field setup: two robot species with
complementary mobility and sensing, a 0.5 m perception grid, 1 m
supervoxel seeding and a 10 s route horizon.  Everything is plain
dataclasses so tests can build variants with `dataclasses.replace`.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

# Traversal requirement value meaning "no species can enter".  Fits the
# 6-bit wire field and dominates max() when requirements are fused.
INFEASIBLE = 63

# Cluster/view label meaning "every species qualifies".
LABEL_ANY = "any"


@dataclass(frozen=True)
class RobotSpecies:
    """Capability sheet for one robot type.

    Levels are ranks among the species present: 1 is the least capable
    tier and higher levels strictly contain the lower ones.
    """

    name: str
    traversal_level: int
    observation_level: int
    view_range: float        # m, how far this species plans observation views
    coverage_range: float    # m, voxel observations beyond this never count as complete
    move_speed: float        # m/s along planned paths
    obs_rate: float          # observation targets finished per second
    slope_limit_deg: float   # steeper terrain is hazardous for this species
    sparsity_limit: float    # m^2 per return above which the surface reads as unsafe
    sensor_range: float      # m, raw scan reach of the simulated sensor
    body_radius: float = 0.3


# Reference team: a slow tracked crawler that can cross rated rough
# ground but only trusts nearby returns, and a fast wheeled ranger that
# stays on easy ground but observes far.
DEFAULT_SPECIES = (
    RobotSpecies(
        name="crawler",
        traversal_level=2,
        observation_level=1,
        view_range=10.0,
        coverage_range=10.0,
        move_speed=0.4,
        obs_rate=10.0,
        slope_limit_deg=40.0,
        sparsity_limit=2.0,
        sensor_range=12.0,
    ),
    RobotSpecies(
        name="ranger",
        traversal_level=1,
        observation_level=2,
        view_range=27.0,
        coverage_range=27.0,
        move_speed=0.5,
        obs_rate=0.1,
        slope_limit_deg=20.0,
        sparsity_limit=1.0,
        sensor_range=30.0,
    ),
)


@dataclass(frozen=True)
class PlannerParams:
    """Thresholds and weights shared by mapping and planning."""

    # perception
    min_density: float = 0.3          # returns per m^2 of voxel face
    max_obs_angle_deg: float = 45.0   # voxel observation angle ceiling
    facade_slope_deg: float = 45.0    # ground/facade split
    # view generation
    fov_min_deg: float = -45.0        # view elevation window
    fov_max_deg: float = 45.0
    score_angle_weight: float = 0.5   # rad weight in the view score
    score_distance_weight: float = 0.5  # m weight in the view score
    # labeling
    label_traversal_weight: float = 10.0
    label_observation_weight: float = 1.0
    # clustering / routing
    seed_interval: float = 1.0        # m, supervoxel seed lattice pitch
    seed_merge_radius: float = 0.2    # m, duplicate-seed merge reach
    cluster_radius: float = 5.0       # m, view clustering reach
    path_share_horizon: float = 2.0   # m, shared executable path length
    route_timeout_s: float = 10.0     # s, replan horizon
    comm_period_s: float = 1.0        # s, broadcast period
    deviation_decay: float = 0.5      # route deviation position discount
    fitness_total_weight: float = 1.0
    fitness_max_weight: float = 1.5
    fitness_deviation_weight: float = 3.0


@dataclass(frozen=True)
class GaConfig:
    """Assignment solver knobs.

    The stock values favor solution quality; the simulation harness
    passes a lighter profile tuned for its per-round latency budget.
    """

    population: int = 200
    generations: int = 300
    elite_fraction: float = 0.2
    swap_weight: float = 0.4
    shift_weight: float = 0.3
    shuffle_weight: float = 0.3


@dataclass(frozen=True)
class SimParams:
    tick_dt: float = 0.1              # s
    map_resolution: float = 0.5       # m, perception voxel edge
    truth_resolution: float = 1.0     # m, ground-truth surface cells
    sensor_height: float = 1.0        # m above local terrain
    rays_azimuth: int = 128
    rays_elevation: int = 32
    scan_noise: float = 0.01          # m, 1-sigma along the ray
    bus_latency_ticks: int = 1
    max_time_s: float = 1200.0
    # harness GA profile, overridable from the CLI
    ga_population: int = 48
    ga_generations: int = 48


@dataclass(frozen=True)
class StackConfig:
    planner: PlannerParams = field(default_factory=PlannerParams)
    ga: GaConfig = field(default_factory=GaConfig)
    sim: SimParams = field(default_factory=SimParams)


def load_config(path: Optional[str] = None) -> StackConfig:
    """Build a StackConfig, optionally overriding defaults from a TOML file.

    The file may contain [planner], [ga] and [sim] tables whose keys match
    the dataclass fields; unknown keys are rejected.
    """
    cfg = StackConfig()
    if path is None:
        return cfg
    with open(path, "rb") as fh:
        data = _toml.load(fh)
    unknown = set(data) - {"planner", "ga", "sim"}
    if unknown:
        raise ValueError(f"unknown config tables: {sorted(unknown)}")
    planner = _apply(cfg.planner, data.get("planner", {}))
    ga = _apply(cfg.ga, data.get("ga", {}))
    sim = _apply(cfg.sim, data.get("sim", {}))
    return StackConfig(planner=planner, ga=ga, sim=sim)


def _apply(obj, table: dict):
    bad = set(table) - set(obj.__dataclass_fields__)
    if bad:
        raise ValueError(f"unknown config keys: {sorted(bad)}")
    return replace(obj, **table) if table else obj


def species_by_name(species: tuple[RobotSpecies, ...]) -> dict[str, RobotSpecies]:
    return {s.name: s for s in species}


def flatten_capabilities(species: tuple[RobotSpecies, ...]) -> tuple[RobotSpecies, ...]:
    """Clamp every species to the weakest tier present.

    Used by the no-heterogeneity ablation: traversal and observation
    levels, view reach and coverage reach all drop to the team minimum;
    drive speeds and body geometry stay untouched.
    """
    lo_trav = min(s.traversal_level for s in species)
    lo_obs = min(s.observation_level for s in species)
    lo_view = min(s.view_range for s in species)
    lo_cov = min(s.coverage_range for s in species)
    lo_sensor = min(s.sensor_range for s in species)
    return tuple(
        replace(
            s,
            traversal_level=lo_trav,
            observation_level=lo_obs,
            view_range=lo_view,
            coverage_range=lo_cov,
            sensor_range=lo_sensor,
        )
        for s in species
    )
