#!/usr/bin/env python3
"""Generate the bundled benchmark scenarios as JSON files.

Each scene is hand-laid-out: thin-walled structures the low robot
cannot see over, debris yards the tall robot cannot drive into, and
gentle rubble everywhere else.  Heights come from fixed gaussian
bumps, so regeneration is reproducible without an RNG.
"""

from __future__ import annotations

import argparse
import json
import os


def heightfield(bounds, cell, bumps):
    """Row-major node elevations for sum-of-bumps terrain."""
    (x0, y0), (x1, y1) = bounds
    nx = int(round((x1 - x0) / cell)) + 1
    ny = int(round((y1 - y0) / cell)) + 1
    flat = []
    for j in range(ny):
        y = y0 + j * cell
        for i in range(nx):
            x = x0 + i * cell
            z = 0.0
            for cx, cy, amp, sigma in bumps:
                d2 = (x - cx) ** 2 + (y - cy) ** 2
                z += amp * 2.718281828459045 ** (-d2 / (2.0 * sigma * sigma))
            flat.append(round(z, 4))
    return flat


def box(x0, y0, x1, y1, z0, z1):
    return {"min": [x0, y0, z0], "max": [x1, y1, z1]}


def outline(x0, y0, x1, y1, h, t=0.3, door=None, z0=-0.1):
    """Four thin walls around a rectangle, optionally with a doorway.

    door = (side, lo, hi) with side in n/s/e/w; lo..hi is the gap span
    along that wall.
    """
    walls = {
        "w": (x0, y0, x0 + t, y1),
        "e": (x1 - t, y0, x1, y1),
        "s": (x0 + t, y0, x1 - t, y0 + t),
        "n": (x0 + t, y1 - t, x1 - t, y1),
    }
    out = []
    for side, (a0, b0, a1, b1) in walls.items():
        if door is not None and door[0] == side:
            lo, hi = door[1], door[2]
            if side in ("s", "n"):
                out.append(box(a0, b0, lo, b1, z0, h))
                out.append(box(hi, b0, a1, b1, z0, h))
            else:
                out.append(box(a0, b0, a1, lo, z0, h))
                out.append(box(a0, hi, a1, b1, z0, h))
        else:
            out.append(box(a0, b0, a1, b1, z0, h))
    return out


def court(x0, y0, x1, y1, h, open_side, t=0.3, z0=-0.1):
    """Three walls; the named side stays open."""
    walls = {
        "w": box(x0, y0, x0 + t, y1, z0, h),
        "e": box(x1 - t, y0, x1, y1, z0, h),
        "s": box(x0, y0, x1, y0 + t, z0, h),
        "n": box(x0, y1 - t, x1, y1, z0, h),
    }
    return [b for side, b in walls.items() if side != open_side]


def rect_patch(x0, y0, x1, y1, level=2):
    return {
        "polygon": [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        "level": level,
    }


def single_building():
    bounds = ((-16.5, -16.5), (16.5, 16.5))
    cell = 1.0
    bumps = [
        (-12.0, -8.0, 0.30, 2.2),
        (10.0, 12.0, 0.25, 2.0),
        (0.0, -13.0, 0.30, 2.5),
        (-13.0, 11.0, 0.22, 1.9),
        (14.0, -2.0, 0.28, 2.1),
    ]
    boxes = []
    # hollow block, full height, one doorway on the south side
    boxes += outline(-9.0, 0.5, 3.0, 8.5, h=8.0, door=("s", -4.5, -1.5))
    # low walled yard, mouth to the south behind a debris apron
    boxes += court(6.0, -10.0, 13.0, -3.0, h=2.5, open_side="s")
    patches = [rect_patch(5.5, -11.5, 13.5, -8.5)]
    return {
        "name": "single_building",
        "bounds": {"min": [bounds[0][0], bounds[0][1], -1.0],
                   "max": [bounds[1][0], bounds[1][1], 10.0]},
        "cell_size": cell,
        "heightfield": heightfield(bounds, cell, bumps),
        "boxes": boxes,
        "patches": patches,
        "robots": [
            {"id": 0, "species": "crawler", "start": [-13.0, -13.0, 0.0]},
            {"id": 1, "species": "ranger", "start": [13.0, 13.0, 0.0]},
        ],
    }


def multi_building():
    bounds = ((-14.5, -12.5), (14.5, 12.5))
    cell = 1.0
    bumps = [
        (-1.5, 1.5, 0.30, 2.4),
        (12.0, -8.5, 0.25, 2.0),
        (-13.0, -1.5, 0.28, 2.2),
        (1.0, 11.0, 0.22, 1.9),
        (8.5, 2.8, 0.26, 2.3),
        (-5.5, -11.8, 0.24, 2.0),
    ]
    boxes = []
    boxes += outline(-12.0, 4.0, -5.0, 9.0, h=7.0, door=("s", -10.0, -7.0))
    boxes += outline(4.5, 5.5, 11.5, 10.0, h=5.0, door=("s", 6.5, 9.5))
    boxes += outline(-2.5, -11.0, 3.5, -6.5, h=3.5, door=("n", -1.0, 2.0))
    boxes += court(-11.5, -10.0, -5.5, -4.5, h=2.5, open_side="e")
    boxes += court(6.5, -4.0, 12.5, 1.0, h=2.5, open_side="w")
    patches = [
        rect_patch(-6.0, -10.5, -3.5, -4.0),
        rect_patch(4.0, -4.5, 7.0, 0.5),
    ]
    return {
        "name": "multi_building",
        "bounds": {"min": [bounds[0][0], bounds[0][1], -1.0],
                   "max": [bounds[1][0], bounds[1][1], 9.0]},
        "cell_size": cell,
        "heightfield": heightfield(bounds, cell, bumps),
        "boxes": boxes,
        "patches": patches,
        "robots": [
            {"id": 0, "species": "crawler", "start": [-13.2, 11.0, 0.0]},
            {"id": 1, "species": "crawler", "start": [13.2, -11.3, 0.0]},
            {"id": 2, "species": "ranger", "start": [-13.2, -11.3, 0.0]},
            {"id": 3, "species": "ranger", "start": [13.2, 11.3, 0.0]},
        ],
    }


def crossing():
    bounds = ((-10.0, -10.0), (10.0, 10.0))
    cell = 1.0
    bumps = [
        (0.0, 7.0, 0.25, 2.0),
        (-4.0, -7.0, 0.22, 1.9),
    ]
    boxes = [
        # tall slab: the upper band is out of the low robot's view reach
        box(-7.0, -5.0, -6.7, 5.0, -0.1, 9.0),
    ]
    boxes += court(4.0, -4.0, 9.0, 4.0, h=2.5, open_side="w")
    patches = [rect_patch(2.5, -4.5, 4.5, 4.5)]
    return {
        "name": "crossing",
        "bounds": {"min": [bounds[0][0], bounds[0][1], -1.0],
                   "max": [bounds[1][0], bounds[1][1], 10.0]},
        "cell_size": cell,
        "heightfield": heightfield(bounds, cell, bumps),
        "boxes": boxes,
        "patches": patches,
        "robots": [
            {"id": 0, "species": "crawler", "start": [-8.5, -8.0, 0.0]},
            {"id": 1, "species": "ranger", "start": [7.0, 7.5, 0.0]},
        ],
    }


def pinch():
    """Two rooms joined by one corridor; floors only the crawler covers.

    The tall robot's share of the work sits on the far side of the
    corridor from where it starts (and vice versa), so both robots
    must transit the same 3 m gap in opposite directions.  This is
    the scene that actually exercises path conflicts.
    """
    bounds = ((-10.0, -4.5), (10.0, 4.5))
    cell = 1.0
    bumps = [
        (-6.0, 2.0, 0.18, 2.0),
        (7.0, -2.0, 0.16, 1.8),
    ]
    boxes = [
        # slabs sealing everything between the rooms except the corridor
        box(-3.0, 1.5, 3.0, 4.5, -0.1, 2.0),
        box(-3.0, -4.5, 3.0, -1.5, -0.1, 2.0),
    ]
    patches = [
        # both room floors are debris; the corridor and its mouths stay clear
        rect_patch(-10.0, -4.5, -4.5, 4.5),
        rect_patch(4.5, -4.5, 10.0, 4.5),
    ]
    return {
        "name": "pinch",
        "bounds": {"min": [bounds[0][0], bounds[0][1], -1.0],
                   "max": [bounds[1][0], bounds[1][1], 6.0]},
        "cell_size": cell,
        "heightfield": heightfield(bounds, cell, bumps),
        "boxes": boxes,
        "patches": patches,
        "robots": [
            {"id": 0, "species": "crawler", "start": [9.0, 3.0, 0.0]},
            {"id": 1, "species": "ranger", "start": [-3.8, 0.0, 0.0]},
        ],
    }


SCENES = {
    "single_building": single_building,
    "multi_building": multi_building,
    "crossing": crossing,
    "pinch": pinch,
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="scenarios", help="output directory")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for name, build in SCENES.items():
        path = os.path.join(args.out, f"{name}.json")
        with open(path, "w") as fh:
            json.dump(build(), fh)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
