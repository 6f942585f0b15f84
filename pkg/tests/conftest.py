import dataclasses

import pytest

from isgraph.config import RunConfig
from isgraph.synth import DIFFICULTIES, gen_scene


@pytest.fixture(scope="session")
def scenes_by_difficulty():
    return {d: [gen_scene(100 + i, d) for i in range(6)] for d in DIFFICULTIES}


@pytest.fixture(scope="session")
def interactive_scenes(scenes_by_difficulty):
    return scenes_by_difficulty["interactive"]


@pytest.fixture(scope="session")
def small_cfg():
    """Narrow network for fast unit tests."""
    cfg = RunConfig()
    return dataclasses.replace(cfg, isg=dataclasses.replace(cfg.isg, width=16))
