import copy

import numpy as np
import pytest
from hypothesis import strategies as st

from process_painter.planner import sample_scene
from process_painter.scene_graph import parse_scene
from process_painter.settings import DEFAULT_SETTINGS


@pytest.fixture
def settings():
    return copy.deepcopy(DEFAULT_SETTINGS)


@pytest.fixture
def tiny_settings(settings):
    """Targets small enough for a full gen-dataset pass inside a unit test."""
    settings["scale"] = 1.0
    settings["dataset"]["targets"] = {"multiturn": 4, "conflict": 6, "alignment": 6}
    settings["eval"]["n"] = 4
    return settings


@pytest.fixture
def two_objects():
    return parse_scene("red circle above blue square")


def scene_from_seed(seed, max_objects=5):
    return sample_scene(np.random.default_rng([seed, 99]), max_objects=max_objects)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
scenes = seeds.map(scene_from_seed)
