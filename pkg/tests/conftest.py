import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from raydose.scene import parse_scene_text, load_scene
from importlib import resources

PEC_GROUND = """
frequency 5.9e9
[materials]
metal PEC
[surfaces]
ground metal terrain  -4000 -4000 0  4000 -4000 0  4000 4000 0  -4000 4000 0
"""

EMPTY = """
frequency 5.9e9
[materials]
metal PEC
"""

CANYON = """
frequency 5.9e9
[materials]
metal PEC
[surfaces]
wall_a metal building_wall  -60 0 0   60 0 0   60 0 40  -60 0 40
wall_b metal building_wall  -60 12 0  -60 12 40  60 12 40  60 12 0
ground metal terrain        -60 0 0   60 0 0   60 12 0   -60 12 0
"""

SCREEN = """
frequency 5.9e9
[materials]
metal PEC
[surfaces]
screen metal other  0 -40 0  0 40 0  0 40 12  0 -40 12  edges=boundary
"""


@pytest.fixture(scope="session")
def empty_scene():
    return parse_scene_text(EMPTY, "empty")


@pytest.fixture(scope="session")
def ground_scene():
    return parse_scene_text(PEC_GROUND, "ground")


@pytest.fixture(scope="session")
def canyon_scene():
    return parse_scene_text(CANYON, "canyon")


@pytest.fixture(scope="session")
def screen_scene():
    return parse_scene_text(SCREEN, "screen")


@pytest.fixture(scope="session")
def bundled_scene_path():
    return Path(str(resources.files("raydose.data") / "intersection.scene"))


@pytest.fixture(scope="session")
def bundled_scene(bundled_scene_path):
    return load_scene(bundled_scene_path)


def line_of_receivers(distances, height=1.7):
    return np.array([[d, 0.0, height] for d in distances])
