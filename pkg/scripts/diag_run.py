"""Scratch driver: run one scenario and print convergence diagnostics."""
import sys
import time

sys.path.insert(0, "/root/pkg/src")
import numpy as np

from hexplore.config import StackConfig
from hexplore.simulation import Simulation
from hexplore.world import load_scenario


def main() -> None:
    scenario = sys.argv[1] if len(sys.argv) > 1 else "single_building"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 3
    max_time = float(sys.argv[3]) if len(sys.argv) > 3 else 600.0
    variant = sys.argv[4] if len(sys.argv) > 4 else "full"

    world = load_scenario(f"/root/pkg/scenarios/{scenario}.json")
    cfg = StackConfig()
    sim = Simulation(world, cfg, seed=seed, variant=variant)
    t0 = time.time()
    res = sim.run(max_time_s=max_time)
    wall = time.time() - t0

    print(f"scenario={scenario} seed={seed} variant={variant}")
    print(f"wall={wall:.1f}s sim={res.sim_time_s:.1f}s ticks={res.ticks}")
    print(f"completeness={res.completeness:.4f} contributions={res.contributions}")
    print(f"travelled={ {k: round(v, 1) for k, v in res.travelled_m.items()} }")
    print(f"planning mean={res.planning_ms_mean:.1f}ms max={res.planning_ms_max:.1f}ms "
          f"rounds={len(res.planning)}")
    print(f"bytes={res.bytes_by_category}")
    full, raw = res.full_policy_bytes, res.raw_policy_bytes
    print(f"map_inc={res.map_increment_bytes} full={full} raw={raw} "
          f"inc/full={res.map_increment_bytes / max(full, 1):.4f} "
          f"inc/raw={res.map_increment_bytes / max(raw, 1):.4f}")
    print(f"deadlocks total={res.deadlocks_total} unresolved={res.deadlocks_unresolved} "
          f"min_pair={res.min_pairwise_m:.2f}")
    # worst planning rounds with phase split
    rows = sorted(res.planning, key=lambda r: -r[-1])[:6]
    for r in rows:
        print("  slow-round", dict(zip(res.planning_header, r)))
    for rid, ag in sim.agents.items():
        print(f"  agent {rid}: finished={ag.finished} rounds={ag.round_index} "
              f"pos={np.round(ag.position, 1).tolist()}")
        for st in ag.plan_history[-4:]:
            print(f"    round={st.round_index} sv={st.n_supervoxels} views={st.n_views} "
                  f"clusters={st.n_clusters} views_ms={st.views_ms:.0f} "
                  f"assign_ms={st.assign_ms:.0f} tour_ms={st.tour_ms:.0f}")


if __name__ == "__main__":
    main()
