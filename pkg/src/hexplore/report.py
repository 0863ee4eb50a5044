"""Run artifacts: delimited tables, a JSON summary, and rendered figures.

Everything lands in one output directory per run so downstream tooling
can diff metrics.csv between runs or eyeball trajectory.svg directly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Polygon as MplPolygon
from matplotlib.patches import Rectangle

from .simulation import SimResult
from .world import ScenarioWorld


def _write_csv(path: Path, header: list[str], rows: list[list[float]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def summary_dict(result: SimResult) -> dict:
    """Flat headline numbers for summary.json and the CLI footer."""
    full = result.full_policy_bytes
    raw = result.raw_policy_bytes
    return {
        "scenario": result.scenario,
        "variant": result.variant,
        "seed": result.seed,
        "ticks": result.ticks,
        "sim_time_s": round(result.sim_time_s, 3),
        "completeness": round(result.completeness, 6),
        "contributions": {
            str(k): round(v, 6) for k, v in sorted(result.contributions.items())
        },
        "travelled_m": {
            str(k): round(v, 3) for k, v in sorted(result.travelled_m.items())
        },
        "travelled_total_m": round(sum(result.travelled_m.values()), 3),
        "bytes_by_category": dict(result.bytes_by_category),
        "map_increment_bytes": result.map_increment_bytes,
        "full_policy_bytes": full,
        "raw_policy_bytes": raw,
        "increment_vs_full": round(result.map_increment_bytes / full, 6)
        if full
        else None,
        "increment_vs_raw": round(result.map_increment_bytes / raw, 6)
        if raw
        else None,
        "planning_ms_mean": round(result.planning_ms_mean, 3),
        "planning_ms_max": round(result.planning_ms_max, 3),
        "planning_rounds": len(result.planning),
        "deadlocks_total": result.deadlocks_total,
        "deadlocks_resolved": result.deadlocks_resolved,
        "deadlocks_unresolved": result.deadlocks_unresolved,
        "min_pairwise_m": round(result.min_pairwise_m, 4),
        "unreachable_clusters": result.unreachable_clusters,
        "map_hashes": {str(k): v for k, v in sorted(result.table_hashes.items())},
    }


def _draw_world(ax, world: ScenarioWorld) -> None:
    lo, hi = world.bounds_min, world.bounds_max
    ax.imshow(
        world.heights,
        origin="lower",
        extent=(lo[0], hi[0], lo[1], hi[1]),
        cmap="Greys",
        alpha=0.45,
        interpolation="bilinear",
    )
    for box in world.boxes:
        ax.add_patch(
            Rectangle(
                (box[0, 0], box[0, 1]),
                box[1, 0] - box[0, 0],
                box[1, 1] - box[0, 1],
                facecolor="#8a6d3b",
                edgecolor="#5c4a28",
                alpha=0.8,
                zorder=2,
            )
        )
    for patch in world.patches:
        ax.add_patch(
            MplPolygon(
                patch.polygon,
                closed=True,
                facecolor="#d08770",
                edgecolor="none",
                alpha=0.35,
                zorder=2,
            )
        )


def render_trajectories(
    result: SimResult, path: Path, world: Optional[ScenarioWorld] = None
) -> None:
    """Top-down picture of where each robot went."""
    fig, ax = plt.subplots(figsize=(7.5, 7.5))
    if world is not None:
        _draw_world(ax, world)
    cmap = plt.get_cmap("tab10")
    for i, (rid, track) in enumerate(sorted(result.trajectories.items())):
        color = cmap(i % 10)
        ax.plot(track[:, 0], track[:, 1], color=color, lw=1.2,
                label=f"robot {rid}", zorder=4)
        ax.plot(track[0, 0], track[0, 1], marker="^", color=color,
                ms=9, zorder=5)
        ax.plot(track[-1, 0], track[-1, 1], marker="o", color=color,
                ms=7, zorder=5)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(
        f"{result.scenario} / {result.variant} / seed {result.seed} "
        f"({result.completeness:.1%} complete)"
    )
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_progress(result: SimResult, path: Path) -> None:
    """Completeness over time plus everyone's share of it."""
    header = result.metrics_header
    data = np.asarray(result.metrics, dtype=float)
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    if len(data):
        t = data[:, header.index("time_s")]
        ax.plot(t, data[:, header.index("completeness")],
                color="black", lw=1.8, label="team")
        cmap = plt.get_cmap("tab10")
        contrib_cols = [
            (i, name) for i, name in enumerate(header)
            if name.startswith("contrib_")
        ]
        for j, (col, name) in enumerate(contrib_cols):
            ax.plot(t, data[:, col], color=cmap(j % 10), lw=1.1,
                    label=f"robot {name.split('_')[1]}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("surface mapped [fraction]")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title(f"{result.scenario} / {result.variant} / seed {result.seed}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_report(
    result: SimResult,
    out_dir: str | Path,
    world: Optional[ScenarioWorld] = None,
) -> list[Path]:
    """Write every artifact for one run; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []

    metrics = out / "metrics.csv"
    _write_csv(metrics, result.metrics_header, result.metrics)
    created.append(metrics)

    planning = out / "planning.csv"
    _write_csv(planning, result.planning_header, result.planning)
    created.append(planning)

    summary = out / "summary.json"
    summary.write_text(json.dumps(summary_dict(result), indent=2) + "\n")
    created.append(summary)

    traj = out / "trajectory.svg"
    render_trajectories(result, traj, world)
    created.append(traj)

    progress = out / "completeness.svg"
    render_progress(result, progress)
    created.append(progress)

    return created
