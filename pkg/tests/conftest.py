import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hexplore import config, world


def make_scenario(tmp_path, *, bounds=((0, 0, 0), (10, 10, 6)), cell=1.0,
                  heights=None, boxes=(), patches=(), robots=None, name="test"):
    bmin, bmax = bounds
    nx = int(round((bmax[0] - bmin[0]) / cell)) + 1
    ny = int(round((bmax[1] - bmin[1]) / cell)) + 1
    if heights is None:
        heights = [0.0] * (nx * ny)
    if robots is None:
        robots = [
            {"id": 0, "species": "crawler", "start": [1.0, 1.0, 0.0]},
            {"id": 1, "species": "ranger", "start": [2.0, 1.0, 0.0]},
        ]
    data = {
        "name": name,
        "bounds": {"min": list(bmin), "max": list(bmax)},
        "cell_size": cell,
        "heightfield": heights,
        "boxes": [{"min": list(b[0]), "max": list(b[1])} for b in boxes],
        "patches": [{"polygon": p[0], "level": p[1]} for p in patches],
        "robots": robots,
    }
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(data))
    return world.load_scenario(str(path))


@pytest.fixture
def flat_world(tmp_path):
    return make_scenario(tmp_path, boxes=[((4, 4, 0), (6, 6, 2))])


@pytest.fixture
def planner_params():
    return config.PlannerParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
