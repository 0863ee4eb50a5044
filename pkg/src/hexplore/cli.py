"""Command-line front end.

`hexplore run` executes one scenario end to end and drops the metrics
tables, a JSON summary, and rendered figures into an output directory.
`hexplore allocate` runs the cluster-allocation solver on a standalone
problem instance, which is handy for tuning it in isolation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .assignment import AssignmentProblem, GaConfig, evolve
from .config import StackConfig, load_config
from .report import summary_dict, write_report
from .simulation import Simulation
from .world import load_scenario


def _resolve_scenario(arg: str) -> Path:
    p = Path(arg)
    if p.is_file():
        return p
    candidate = Path("scenarios") / f"{arg}.json"
    if candidate.is_file():
        return candidate
    raise SystemExit(f"scenario not found: {arg!r} (no file, no scenarios/{arg}.json)")


def _cmd_run(args: argparse.Namespace) -> int:
    path = _resolve_scenario(args.scenario)
    world = load_scenario(str(path))
    config = load_config(args.config) if args.config else StackConfig()
    overrides = {}
    if args.ga_pop is not None:
        overrides["ga_population"] = args.ga_pop
    if args.ga_gens is not None:
        overrides["ga_generations"] = args.ga_gens
    if overrides:
        config = dataclasses.replace(
            config, sim=dataclasses.replace(config.sim, **overrides)
        )

    sim = Simulation(world, config, seed=args.seed, variant=args.variant,
                     workers=args.workers)
    result = sim.run(max_time_s=args.max_time)

    out = Path(args.out)
    created = write_report(result, out, world)
    summary = summary_dict(result)
    print(f"scenario={summary['scenario']} variant={summary['variant']} "
          f"seed={summary['seed']}")
    print(f"simulated {summary['sim_time_s']:.0f} s in {summary['ticks']} ticks; "
          f"surface mapped: {summary['completeness']:.1%}")
    print(f"travelled: {summary['travelled_total_m']:.1f} m total "
          f"{summary['travelled_m']}")
    print(f"planning: mean {summary['planning_ms_mean']:.0f} ms, "
          f"max {summary['planning_ms_max']:.0f} ms over "
          f"{summary['planning_rounds']} rounds")
    print(f"bus bytes: {summary['bytes_by_category']}")
    for p in created:
        print(f"wrote {p}")
    return 0


def _cmd_allocate(args: argparse.Namespace) -> int:
    spec = json.loads(Path(args.instance).read_text())
    problem = AssignmentProblem(
        delta=np.asarray(spec["delta"], dtype=float),
        transitions=np.asarray(spec["transitions"], dtype=float),
        labels=list(spec["labels"]),
        species_of_robot=list(spec["species_of_robot"]),
        centers=np.asarray(spec["centers"], dtype=float)
        if "centers" in spec
        else None,
    )
    cfg = GaConfig(population=args.pop, generations=args.gens)
    rng = np.random.default_rng(args.seed)
    result = evolve(problem, cfg, rng)
    print(f"fitness={result.best_fitness:.4f}")
    for r, seq in enumerate(result.best.routes):
        print(f"robot {r} ({problem.species_of_robot[r]}): "
              f"{list(seq)}  cost={result.route_costs[r]:.2f}")
    if result.dropped_clusters:
        print(f"unservable clusters: {result.dropped_clusters}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hexplore",
        description="Multi-robot collaborative exploration simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario and write a report")
    run.add_argument("--scenario", required=True,
                     help="scenario JSON path, or a name under ./scenarios")
    run.add_argument("--variant", default="full",
                     choices=("full", "no_hetero", "no_cluster", "no_mnss",
                              "no_assign"))
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--max-time", type=float, default=None,
                     help="simulated seconds budget (default: config value)")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--config", default=None, help="TOML config overrides")
    run.add_argument("--workers", type=int, default=0,
                     help="scan worker threads (0 = sequential)")
    run.add_argument("--ga-pop", type=int, default=None,
                     help="override allocation population size")
    run.add_argument("--ga-gens", type=int, default=None,
                     help="override allocation generation count")
    run.set_defaults(func=_cmd_run)

    alloc = sub.add_parser(
        "allocate", help="solve a standalone cluster-allocation instance"
    )
    alloc.add_argument("--instance", required=True,
                       help="JSON with delta/transitions/labels/species_of_robot")
    alloc.add_argument("--seed", type=int, default=1)
    alloc.add_argument("--pop", type=int, default=200)
    alloc.add_argument("--gens", type=int, default=300)
    alloc.set_defaults(func=_cmd_allocate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
