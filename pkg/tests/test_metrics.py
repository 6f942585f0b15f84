import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from isgraph.autodiff import Tape
from isgraph.geometry import box_corners, boxes_overlap, path_headings, points_in_box, to_local, to_world
from isgraph.network import ModalityOutput
from isgraph.train import (
    constant_velocity,
    layer_motion_loss,
    motion_loss,
    motion_metrics,
    plan_collisions,
    plan_loss,
    plan_metrics,
)


def random_motion_instance(rng):
    a, m, t = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 8)
    traj = rng.normal(scale=3.0, size=(a, m, t, 2))
    gt = rng.normal(scale=3.0, size=(a, t, 2))
    valid = rng.random((a, t)) < 0.7
    return traj, gt, valid


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_motion_metrics_match_oracle(seed):
    traj, gt, valid = random_motion_instance(np.random.default_rng(seed))
    got = motion_metrics(traj, gt, valid)
    want = oracles.motion_metrics(traj.tolist(), gt.tolist(), valid.tolist())
    assert got.agents == int(valid.any(axis=1).sum())
    assert abs(got.min_ade - want[0]) < 1e-10
    assert abs(got.min_fde - want[1]) < 1e-10
    assert abs(got.miss_rate - want[2]) < 1e-10


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["smooth_l1", "l1"]))
def test_layer_motion_loss_matches_oracle(seed, regression):
    rng = np.random.default_rng(seed)
    traj, gt, valid = random_motion_instance(rng)
    logits = rng.normal(size=traj.shape[:2])
    t = Tape()
    out = ModalityOutput(t.const(traj), t.const(logits), None)
    got = float(layer_motion_loss(out, gt, valid, regression).value)
    want = oracles.layer_motion_loss(traj.tolist(), logits.tolist(), gt.tolist(), valid.tolist(), regression)
    assert abs(got - want) < 1e-10


def test_motion_loss_sums_layers():
    rng = np.random.default_rng(0)
    traj, gt, valid = random_motion_instance(rng)
    t = Tape()
    outs = [ModalityOutput(t.const(traj + i), t.const(rng.normal(size=traj.shape[:2])), None) for i in range(3)]
    total = float(motion_loss(outs, gt, valid).value)
    assert total == pytest.approx(sum(float(layer_motion_loss(o, gt, valid).value) for o in outs), abs=1e-12)
    with pytest.raises(ValueError):
        motion_loss([], gt, valid)


def test_plan_loss_is_mean_smooth_l1():
    rng = np.random.default_rng(0)
    wp = rng.normal(size=(3, 6, 2))
    gt = rng.normal(size=(3, 6, 2))
    t = Tape()
    got = float(plan_loss(t.const(wp), gt).value)
    want = sum(oracles.smooth_l1(x) for x in (wp - gt).ravel()) / 18
    assert got == pytest.approx(want, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_plan_metrics_match_oracle(seed, cumulative):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(1, 9))
    plans = rng.normal(scale=5, size=(b, 6, 2))
    gt = rng.normal(scale=5, size=(b, 6, 2))
    col = rng.random((b, 6)) < 0.2
    got = plan_metrics(plans, gt, col, 0.5, at_step_only=not cumulative)
    l2, c = oracles.plan_metrics(plans.tolist(), gt.tolist(), col.tolist())
    for x, y in zip(got.l2, l2):
        assert abs(x - y) < 1e-10
    if cumulative:
        for x, y in zip(got.collision, c):
            assert abs(x - y) < 1e-10
    else:
        assert got.collision == tuple(float(col[:, k].mean()) for k in (1, 3, 5))


def test_collision_rate_is_cumulative_and_monotone():
    col = np.array([[False, True, False, False, False, False]])
    m = plan_metrics(np.zeros((1, 6, 2)), np.zeros((1, 6, 2)), col)
    assert m.collision == (1.0, 1.0, 1.0)
    assert plan_metrics(np.zeros((1, 6, 2)), np.zeros((1, 6, 2)), col, at_step_only=True).collision == (1.0, 0.0, 0.0)


def _random_box(rng):
    return rng.normal(scale=3, size=2), rng.uniform(-math.pi, math.pi), rng.uniform(0.5, 5), rng.uniform(0.5, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_box_overlap_matches_polygon_sat(seed):
    rng = np.random.default_rng(seed)
    (ca, ha, la, wa), (cb, hb, lb, wb) = _random_box(rng), _random_box(rng)
    got = bool(boxes_overlap(ca, ha, la, wa, cb, hb, lb, wb))
    want = oracles.polygons_overlap(oracles.box_corners(*ca, ha, la, wa), oracles.box_corners(*cb, hb, lb, wb))
    assert got == want


def test_box_overlap_edge_cases():
    assert boxes_overlap((0, 0), 0.0, 4, 2, (0, 0), 1.0, 4, 2)
    assert not boxes_overlap((0, 0), 0.0, 4, 2, (4.0, 0), 0.0, 4, 2)  # touching
    assert boxes_overlap((0, 0), 0.0, 4, 2, (3.99, 0), 0.0, 4, 2)
    # contained box
    assert boxes_overlap((0, 0), 0.3, 10, 10, (0.5, 0.5), 1.2, 1, 1)


def test_box_overlap_broadcasts():
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [2.0, 1.0]])
    got = boxes_overlap(centers, np.zeros(3), 4.0, 2.0, np.zeros(2), 0.0, 4.0, 2.0)
    assert got.tolist() == [True, False, True]


def test_box_corners_counter_clockwise():
    c = box_corners((1.0, 2.0), 0.0, 4.0, 2.0)
    assert np.allclose(c, [[3, 3], [-1, 3], [-1, 1], [3, 1]])
    x, y = c[:, 0], c[:, 1]
    assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) == pytest.approx(8.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi))
def test_local_world_round_trip(x, y, h):
    pts = np.random.default_rng(0).normal(size=(5, 2))
    origin = np.array([x, y])
    np.testing.assert_allclose(to_world(to_local(pts, origin, h), origin, h), pts, atol=1e-12)


def test_points_in_box_strict():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [1.9, 0.9], [0.0, 1.0]])
    assert points_in_box(pts, (0, 0), 0.0, 4.0, 2.0).tolist() == [True, False, True, False]


def test_path_headings_follow_motion_and_hold_when_still():
    pts = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 1.0], [0.0, 1.0]])
    h = path_headings(np.zeros(2), 0.3, pts)
    assert h.tolist() == pytest.approx([0.0, math.pi / 2, math.pi / 2, math.pi])


def test_plan_collisions_flags_overlap_steps():
    plan = np.array([[2.0, 0.0], [4.0, 0.0], [6.0, 0.0]])
    agents = np.array([[[20.0, 0.0], [4.5, 0.5], [20.0, 0.0]]])
    hit = plan_collisions(plan, agents, np.zeros((1, 3)), np.array([[4.0, 2.0]]))
    assert hit.tolist() == [False, True, False]


def test_constant_velocity_extrapolates_heading():
    class S:
        pos = np.array([[1.0, 2.0]])
        heading = np.array([math.pi / 2])
        speed = np.array([2.0])

    cv = constant_velocity(S, 3, 0.5)
    assert cv.shape == (1, 1, 3, 2)
    np.testing.assert_allclose(cv[0, 0], [[1, 3], [1, 4], [1, 5]], atol=1e-12)
