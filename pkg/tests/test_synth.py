import math

import numpy as np
import pytest

from isgraph.geometry import boxes_overlap, path_headings
from isgraph.scene import save_dataset
from isgraph.synth import (
    AGENT_COUNTS,
    DIFFICULTIES,
    GeneratorConfig,
    gen_dataset,
    gen_scene,
    is_validation_index,
    split_dataset,
)

CFG = GeneratorConfig()


def _all(scenes_by_difficulty):
    for d, scenes in scenes_by_difficulty.items():
        for s in scenes:
            yield d, s


def test_agent_counts_and_single_ego_at_origin(scenes_by_difficulty):
    for d, s in _all(scenes_by_difficulty):
        lo, hi = AGENT_COUNTS[d]
        assert lo <= len(s.agents) <= hi
        egos = [a for a in s.agents if a.is_ego]
        assert len(egos) == 1
        cur = egos[0].current
        assert abs(cur.position[0]) < 1e-6 and abs(cur.position[1]) < 1e-6
        assert abs(cur.heading) < 1e-6
        assert (cur.box_length, cur.box_width) == (CFG.ego_length, CFG.ego_width)


def test_conflicts_by_difficulty(scenes_by_difficulty):
    for d, s in _all(scenes_by_difficulty):
        if d == "free_flow":
            assert s.meta["conflict_pairs"] == 0
        else:
            assert s.meta["conflict_pairs"] >= 1


def test_kinematic_limits_hold_on_ground_truth(scenes_by_difficulty):
    dt = 0.5
    for _, s in _all(scenes_by_difficulty):
        for a, fut in zip(s.agents, s.futures_array()):
            path = np.concatenate([[a.current.position], fut])
            v = np.hypot(*np.diff(path, axis=0).T) / dt
            assert v.max() <= CFG.max_speed + 1e-4
            assert np.abs(np.diff(v)).max() / dt <= CFG.max_accel + 1e-3
            for st in a.history:
                assert st.speed <= CFG.max_speed + 1e-6
                assert abs(st.acceleration) <= CFG.max_accel + 1e-6
                assert abs(st.yaw_rate) <= CFG.max_yaw_rate + 1e-6


def test_no_box_overlap_in_history_or_future(scenes_by_difficulty):
    for _, s in _all(scenes_by_difficulty):
        n = len(s.agents)
        for k in range(len(s.agents[0].history)):
            for i in range(n):
                for j in range(i + 1, n):
                    a, b = s.agents[i].history[k], s.agents[j].history[k]
                    assert not boxes_overlap(a.position, a.heading, a.box_length, a.box_width, b.position, b.heading, b.box_length, b.box_width)
        fut = s.futures_array()
        heads = [path_headings(np.array(a.current.position), a.current.heading, f) for a, f in zip(s.agents, fut)]
        # headings recovered from 0.5 s displacements are approximate; shrink boxes slightly
        dims = [(0.9 * a.current.box_length, 0.9 * a.current.box_width) for a in s.agents]
        for i in range(n):
            for j in range(i + 1, n):
                hit = boxes_overlap(fut[i], heads[i], dims[i][0], dims[i][1], fut[j], heads[j], dims[j][0], dims[j][1])
                assert not hit.any()


def test_map_is_clipped_to_radius_and_nonempty(scenes_by_difficulty):
    for _, s in _all(scenes_by_difficulty):
        assert s.map
        for m in s.map:
            assert min(math.hypot(x, y) for x, y in m.points) <= CFG.map_radius + 1e-6


def test_history_is_consistent_with_speed(scenes_by_difficulty):
    for _, s in _all(scenes_by_difficulty):
        for a in s.agents:
            pos = np.array([st.position for st in a.history])
            step = np.hypot(*np.diff(pos, axis=0).T)
            speeds = np.array([st.speed for st in a.history])
            # with |accel| <= a_max the speed inside a step exceeds the larger endpoint by at most a_max * dt / 2
            bound = 0.5 * np.maximum(speeds[:-1], speeds[1:]) + CFG.max_accel * 0.5**2 / 4
            assert np.all(step <= bound + 1e-4)


def test_generation_is_deterministic(tmp_path):
    a = gen_dataset(4, 7, {"interactive": 1.0, "dense": 1.0, "free_flow": 1.0})
    b = gen_dataset(4, 7, {"interactive": 1.0, "dense": 1.0, "free_flow": 1.0})
    save_dataset(a, tmp_path / "a.jsonl")
    save_dataset(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert gen_scene(5, "interactive") != gen_scene(6, "interactive")


def test_mix_picks_difficulties_by_weight():
    scenes = gen_dataset(6, 0, {"free_flow": 1.0})
    assert {s.meta["difficulty"] for s in scenes} == {"free_flow"}


def test_unknown_difficulty_rejected():
    with pytest.raises(ValueError):
        gen_scene(0, "chaos")
    with pytest.raises(ValueError):
        gen_dataset(2, 0, {"chaos": 1.0})


def test_validation_split_is_about_ten_percent_and_order_preserving():
    frac = np.mean([is_validation_index(i) for i in range(5000)])
    assert 0.08 < frac < 0.12
    train, val = split_dataset(list(range(50)))
    assert sorted(train + val) == list(range(50))
    assert train == sorted(train) and val == sorted(val)


def test_difficulties_constant():
    assert DIFFICULTIES == ("free_flow", "interactive", "dense")
