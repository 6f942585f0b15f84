"""Synthetic driving scenes: lane geometry plus interacting kinematic agents.

Agents follow dense route polylines with a speed controller that respects
curvature, acceleration and yaw-rate limits.  Interaction is resolved by a
priority-ordered rollout: agents are simulated from highest to lowest
priority, and each one brakes whenever its short-horizon prediction would
come too close to an agent already simulated.  Lower agent ids have lower
priority, so they are the ones that yield.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .geometry import boxes_overlap, resample_polyline
from .scene import (
    AgentState,
    AgentTrack,
    Command,
    MapKind,
    MapPolyline,
    SceneDims,
    SceneSample,
    quantize,
    to_scene_frame,
    validate_sample,
    wrap_angle,
)

DIFFICULTIES = ("free_flow", "interactive", "dense")


@dataclass(frozen=True)
class GeneratorConfig:
    lane_width: float = 3.5
    junction_half: float = 10.0  # stop lines sit this far from the junction center
    arm_length: float = 70.0
    road_length: float = 160.0
    chunk_length: float = 20.0  # map polylines are cut to at most this length
    map_radius: float = 60.0
    sim_dt: float = 0.1
    max_speed: float = 20.0
    max_accel: float = 4.0
    max_yaw_rate: float = 0.6
    ctrl_accel: float = 2.0
    ctrl_decel: float = 3.5
    ctrl_yaw_rate: float = 0.5
    envelope_decel: float = 2.5
    clearance: float = 0.4
    conflict_radius: float = 2.0
    history_noise: float = 0.0  # sigma in meters, 0 disables
    ego_length: float = 4.0
    ego_width: float = 1.9
    lane_change_prob: float = 0.3
    max_attempts: int = 60

    def to_dict(self) -> dict:
        return asdict(self)


AGENT_COUNTS = {"free_flow": (4, 8), "interactive": (6, 12), "dense": (10, 16)}


# ------------------------------------------------------------------ routes


class Route:
    """Arc-length parameterized polyline, extended straight past its end."""

    def __init__(self, points: np.ndarray, extend: float = 150.0, spacing: float = 0.25):
        pts = np.asarray(points, dtype=np.float64)
        d = pts[-1] - pts[-2]
        d = d / np.hypot(*d)
        pts = np.vstack([pts, pts[-1] + d * extend])
        seg = np.hypot(*np.diff(pts, axis=0).T)
        keep = np.concatenate([[True], seg > 1e-9])
        pts = pts[keep]
        s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
        n = max(int(s[-1] / spacing) + 1, 2)
        self.s = np.linspace(0.0, s[-1], n)
        self.xy = np.stack([np.interp(self.s, s, pts[:, 0]), np.interp(self.s, s, pts[:, 1])], axis=-1)
        tang = np.gradient(self.xy, self.s, axis=0)
        self.heading = np.unwrap(np.arctan2(tang[:, 1], tang[:, 0]))
        self.kappa = np.gradient(self.heading, self.s)  # signed curvature
        self.length = float(self.s[-1])

    def position(self, s) -> np.ndarray:
        s = np.clip(s, 0.0, self.length)
        return np.stack([np.interp(s, self.s, self.xy[:, 0]), np.interp(s, self.s, self.xy[:, 1])], axis=-1)

    def heading_at(self, s):
        return np.interp(np.clip(s, 0.0, self.length), self.s, self.heading)

    def curvature_at(self, s):
        return np.interp(np.clip(s, 0.0, self.length), self.s, self.kappa)

    def project(self, p: np.ndarray) -> tuple[float, float]:
        """(arc length, distance) of the closest route sample to ``p``."""
        d = np.hypot(*(self.xy - p).T)
        i = int(np.argmin(d))
        return float(self.s[i]), float(d[i])


def _bezier(p0, d0, p3, d3, n=60) -> np.ndarray:
    p0, d0, p3, d3 = (np.asarray(v, dtype=np.float64) for v in (p0, d0, p3, d3))
    alpha = 0.55 * float(np.hypot(*(p3 - p0))) / math.sqrt(2.0)
    p1, p2 = p0 + alpha * d0, p3 - alpha * d3
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


def _line(a, b, n=40) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) * np.asarray(a, dtype=np.float64) + t * np.asarray(b, dtype=np.float64)


def _chunks(points: np.ndarray, chunk_length: float, n_points: int) -> list[np.ndarray]:
    seg = np.hypot(*np.diff(points, axis=0).T)
    total = float(seg.sum())
    n = max(1, int(math.ceil(total / chunk_length - 1e-9)))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    out = []
    for k in range(n):
        a, b = total * k / n, total * (k + 1) / n
        ss = np.linspace(a, b, 4 * n_points)
        pts = np.stack([np.interp(ss, s, points[:, 0]), np.interp(ss, s, points[:, 1])], axis=-1)
        out.append(resample_polyline(pts, n_points))
    return out


@dataclass
class RoadMap:
    elements: list[tuple[MapKind, np.ndarray]] = field(default_factory=list)

    def add(self, kind: MapKind, points: np.ndarray, cfg: GeneratorConfig, n_points: int) -> None:
        for chunk in _chunks(points, cfg.chunk_length, n_points):
            self.elements.append((kind, chunk))


@dataclass
class Lane:
    """A drivable lane: the route for agents spawned on it, and a grouping key."""

    key: str
    route: Route
    start_s: float  # earliest spawn arc length
    end_s: float  # latest spawn arc length
    turn: str = "straight"


def _perp(u: np.ndarray) -> np.ndarray:
    return np.array([-u[1], u[0]])


def intersection_layout(cfg: GeneratorConfig, n_points: int) -> tuple[RoadMap, list[Lane]]:
    """Four-arm junction, one lane per direction, right-hand traffic."""
    w, r0, length = cfg.lane_width, cfg.junction_half, cfg.arm_length
    off = w / 2.0
    rmap = RoadMap()
    arms = [np.array([math.cos(k * math.pi / 2), math.sin(k * math.pi / 2)]) for k in range(4)]
    inbound, outbound = [], []
    for u in arms:
        p = _perp(u)
        inbound.append(_line(length * u + off * p, r0 * u + off * p))
        outbound.append(_line(r0 * u - off * p, length * u - off * p))
        rmap.add(MapKind.CENTERLINE, inbound[-1], cfg, n_points)
        rmap.add(MapKind.CENTERLINE, outbound[-1], cfg, n_points)
        rmap.add(MapKind.DIVIDER, _line(r0 * u, length * u), cfg, n_points)
        rmap.add(MapKind.BOUNDARY, _line(r0 * u + w * p, length * u + w * p), cfg, n_points)
        rmap.add(MapKind.BOUNDARY, _line(r0 * u - w * p, length * u - w * p), cfg, n_points)
        rmap.add(MapKind.CROSSING, _line((r0 + 2.0) * u + (w + 0.5) * p, (r0 + 2.0) * u - (w + 0.5) * p), cfg, n_points)
    for k in range(4):
        # rounded corner between arm k (left side) and arm k+1 (right side)
        u, v = arms[k], arms[(k + 1) % 4]
        a = r0 * u + w * _perp(u)
        b = r0 * v - w * _perp(v)
        rmap.add(MapKind.BOUNDARY, _bezier(a, -u, b, v), cfg, n_points)

    lanes = []
    for i in range(4):
        for j, turn in (((i + 1) % 4, "right"), ((i + 2) % 4, "straight"), ((i + 3) % 4, "left")):
            u_i, u_j = arms[i], arms[j]
            if turn == "straight":
                conn = _line(inbound[i][-1], outbound[j][0], 20)
            else:
                conn = _bezier(inbound[i][-1], -u_i, outbound[j][0], u_j)
            rmap.add(MapKind.CENTERLINE, conn, cfg, n_points)
            pts = np.vstack([inbound[i], conn[1:], outbound[j][1:]])
            lanes.append(Lane(f"in{i}", Route(pts), 0.0, length - r0 - 4.0, turn))
        lanes.append(Lane(f"out{i}", Route(outbound[i]), 2.0, length - r0 - 10.0, "straight"))
    return rmap, lanes


def road_layout(cfg: GeneratorConfig, n_points: int, lane_change: bool) -> tuple[RoadMap, list[Lane]]:
    """Straight road with two lanes per direction along the x-axis."""
    w, half = cfg.lane_width, cfg.road_length / 2.0
    rmap = RoadMap()
    ys = {"e0": -w / 2, "e1": -1.5 * w, "w0": w / 2, "w1": 1.5 * w}
    lanes = []
    for key, y in ys.items():
        sign = 1.0 if key.startswith("e") else -1.0
        pts = _line((-sign * half, y), (sign * half, y), 80)
        rmap.add(MapKind.CENTERLINE, pts, cfg, n_points)
        lanes.append(Lane(key, Route(pts), 10.0, cfg.road_length - 100.0))
    for y, kind in ((0.0, MapKind.DIVIDER), (-w, MapKind.DIVIDER), (w, MapKind.DIVIDER), (-2 * w, MapKind.BOUNDARY), (2 * w, MapKind.BOUNDARY)):
        rmap.add(kind, _line((-half, y), (half, y), 80), cfg, n_points)
    rmap.add(MapKind.CROSSING, _line((25.0, -2 * w - 0.5), (25.0, 2 * w + 0.5)), cfg, n_points)
    if lane_change:
        for src, dst in (("e0", "e1"), ("e1", "e0"), ("w0", "w1"), ("w1", "w0")):
            y0, y1 = ys[src], ys[dst]
            sign = 1.0 if src.startswith("e") else -1.0
            x0 = -sign * half
            xs = np.linspace(0.0, cfg.road_length, 400)
            lc_start, lc_len = cfg.road_length / 2.0 - 35.0, 45.0
            u = np.clip((xs - lc_start) / lc_len, 0.0, 1.0)
            y = y0 + (y1 - y0) * (3 * u**2 - 2 * u**3)
            pts = np.stack([x0 + sign * xs, y], axis=-1)
            lanes.append(Lane(src, Route(pts), 10.0, lc_start - 5.0, "lane_change"))
    return rmap, lanes


# ----------------------------------------------------------------- rollout


@dataclass
class AgentPlan:
    lane: Lane
    s0: float
    v0: float
    v_target: float
    length: float
    width: float
    policy: str
    _envelope: np.ndarray | None = field(default=None, repr=False)

    def envelope(self, cfg: GeneratorConfig) -> np.ndarray:
        if self._envelope is None:
            self._envelope = speed_envelope(self.lane.route, self.v_target, cfg)
        return self._envelope


@dataclass
class Rollout:
    s: np.ndarray  # (n_sub + 1,)
    v: np.ndarray
    a: np.ndarray
    xy: np.ndarray  # (n_sub + 1, 2)
    heading: np.ndarray
    yaw_rate: np.ndarray


def _disc_centers(xy: np.ndarray, heading: np.ndarray, length: float) -> np.ndarray:
    """Three disc centers covering a box, shape (..., 3, 2)."""
    d = np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    offs = np.array([-length / 3.0, 0.0, length / 3.0])
    return xy[..., None, :] + offs[:, None] * d[..., None, :]


def _disc_radius(length: float, width: float) -> float:
    return math.hypot(length / 6.0, width / 2.0)


def speed_envelope(route: Route, v_target: float, cfg: GeneratorConfig) -> np.ndarray:
    """Highest speed at each route sample from which every later curve is still reachable."""
    vlim = np.minimum(v_target, cfg.ctrl_yaw_rate / np.maximum(np.abs(route.kappa), 1e-6))
    env = vlim.copy()
    ds = np.diff(route.s)
    for i in range(len(env) - 2, -1, -1):
        env[i] = min(env[i], math.sqrt(env[i + 1] ** 2 + 2.0 * cfg.envelope_decel * ds[i]))
    return env


def rollout(plan: AgentPlan, n_sub: int, cfg: GeneratorConfig, others: Sequence[tuple[Rollout, float, float]] = ()) -> Rollout:
    """Simulate one agent; brake whenever a short prediction comes near an already fixed agent."""
    dt = cfg.sim_dt
    route = plan.lane.route
    s = np.empty(n_sub + 1)
    v = np.empty(n_sub + 1)
    a = np.zeros(n_sub + 1)
    env = plan.envelope(cfg)
    s[0], v[0] = plan.s0, min(plan.v0, float(np.interp(plan.s0, route.s, env)))
    r_self = _disc_radius(plan.length, plan.width)
    if others:
        o_disc = np.stack([_disc_centers(o.xy, o.heading, ln) for o, ln, _ in others], axis=1)  # (T, n_o, 3, 2)
        o_rad = np.array([_disc_radius(ln, wd) for _, ln, wd in others])
    for k in range(n_sub):
        v_eff = float(np.interp(s[k], route.s, env))
        acc = float(np.clip((v_eff - v[k]) / dt, -cfg.ctrl_decel, cfg.ctrl_accel))
        if others:
            horizon = int(math.ceil((max(2.0, v[k] / cfg.ctrl_decel + 1.5)) / dt))
            steps = np.arange(1, horizon + 1)
            idx = np.minimum(k + steps, n_sub)
            theirs = o_disc[idx]  # (H, n_o, 3, 2)
            limit = r_self + o_rad[None, :, None, None] + cfg.clearance

            def first_conflict(vp: np.ndarray) -> float:
                sp = s[k] + np.cumsum(vp) * dt
                mine = _disc_centers(route.position(sp), route.heading_at(sp), plan.length)  # (H, 3, 2)
                gap = np.linalg.norm(mine[:, None, :, None, :] - theirs[:, :, None, :, :], axis=-1)
                hit = np.any(gap < limit, axis=(1, 2, 3))
                return float(np.argmax(hit)) if hit.any() else math.inf

            go = first_conflict(np.minimum(np.maximum(v[k] + acc * steps * dt, 0.0), max(v_eff, v[k])))
            if go < math.inf:
                stop = first_conflict(np.maximum(v[k] - cfg.ctrl_decel * steps * dt, 0.0))
                if stop >= go:
                    acc = -cfg.ctrl_decel
        v_new = max(0.0, v[k] + acc * dt)
        acc = (v_new - v[k]) / dt
        a[k] = acc
        s[k + 1] = s[k] + 0.5 * (v[k] + v_new) * dt
        v[k + 1] = v_new
    a[n_sub] = a[n_sub - 1] if n_sub else 0.0
    xy = route.position(s)
    heading = route.heading_at(s)
    yaw_rate = v * route.curvature_at(s)
    return Rollout(s, v, a, xy, heading, yaw_rate)


def _priority_order(plans: list[AgentPlan], rng: np.random.Generator) -> list[int]:
    """Random priority respecting 'leader before follower' on shared start lanes."""
    keys = rng.random(len(plans))
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(plans):
        groups.setdefault(p.lane.key, []).append(i)
    for members in groups.values():
        vals = sorted(keys[members])
        by_s = sorted(members, key=lambda i: plans[i].s0)
        for i, kv in zip(by_s, vals):
            keys[i] = kv
    return [int(i) for i in np.argsort(-keys, kind="stable")]


# --------------------------------------------------------------- checks


def conflict_pairs(xy: np.ndarray, radius: float, steps: slice) -> list[tuple[int, int]]:
    """Agent pairs whose positions come within ``radius`` at a common timestep in ``steps``."""
    p = xy[:, steps]
    out = []
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if np.min(np.hypot(*(p[i] - p[j]).T)) < radius:
                out.append((i, j))
    return out


def boxes_collide(xy: np.ndarray, heading: np.ndarray, dims: np.ndarray) -> bool:
    """Any pair of agents overlapping at any sampled timestep; xy (A, T, 2)."""
    n = len(xy)
    for i in range(n):
        for j in range(i + 1, n):
            if np.any(boxes_overlap(xy[i], heading[i], dims[i, 0], dims[i, 1], xy[j], heading[j], dims[j, 0], dims[j, 1])):
                return True
    return False


def feasible(r: Rollout, stride: int, cfg: GeneratorConfig) -> bool:
    xy = r.xy[::stride]
    dt = cfg.sim_dt * stride
    sp = np.hypot(*np.diff(xy, axis=0).T) / dt
    if np.any(r.v > cfg.max_speed) or np.any(sp > cfg.max_speed):
        return False
    if np.any(np.abs(r.a) > cfg.max_accel) or np.any(np.abs(np.diff(sp)) / dt > cfg.max_accel):
        return False
    if np.any(np.abs(r.yaw_rate) > cfg.max_yaw_rate):
        return False
    dh = np.diff(r.heading[::stride]) / dt
    return not np.any(np.abs(dh) > cfg.max_yaw_rate)


# --------------------------------------------------------------- scenes


def _scene_rng(seed: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, attempt])


def _spaced(plan: AgentPlan, others: Sequence[AgentPlan], free_flow: bool = False) -> bool:
    pos = plan.lane.route.position(plan.s0)
    for p in others:
        gap = float(np.hypot(*(pos - p.lane.route.position(p.s0))))
        same = p.lane.key == plan.lane.key
        need = max(12.0, 1.5 * max(plan.v0, p.v0)) if same else 7.0
        if free_flow and same:
            need = max(need, 2.0 * plan.v_target + 8.0)
        if gap < need:
            return False
    return True


def _spawn(rng, lanes: list[Lane], n_agents: int, difficulty: str, cfg: GeneratorConfig, ego_dims: tuple[float, float]) -> list[AgentPlan] | None:
    plans: list[AgentPlan] = []
    lane_speed: dict[str, float] = {}
    tries = 0
    while len(plans) < n_agents and tries < 200:
        tries += 1
        lane = lanes[int(rng.integers(len(lanes)))]
        if difficulty == "free_flow" and lane.turn == "lane_change":
            continue
        s0 = float(rng.uniform(lane.start_s, lane.end_s))
        if difficulty == "free_flow":
            v_t = lane_speed.setdefault(lane.key, float(rng.uniform(8.0, 15.0)))
            v0 = v_t
        else:
            v_t = float(rng.uniform(6.0, 12.0))
            v0 = float(np.clip(v_t + rng.uniform(-2.0, 1.0), 2.0, cfg.max_speed))
        if not _spaced(AgentPlan(lane, s0, v0, v_t, 0.0, 0.0, ""), plans, free_flow=difficulty == "free_flow"):
            continue
        policy = "constant_velocity" if difficulty == "free_flow" else {
            "left": "unprotected_turn", "right": "lane_follow", "straight": "lane_follow", "lane_change": "lane_change"
        }[lane.turn]
        length, width = float(rng.uniform(3.8, 5.2)), float(rng.uniform(1.7, 2.1))
        plans.append(AgentPlan(lane, s0, v0, v_t, length, width, policy))
    if len(plans) < min(n_agents, 4):
        return None
    return plans


def _crossing_point(ra: Route, rb: Route, sa_min: float, sb_min: float) -> tuple[float, float] | None:
    step = 4
    rows = slice(int(np.searchsorted(ra.s, sa_min)), int(np.searchsorted(ra.s, sa_min + 100.0)), step)
    pa, pb = ra.xy[rows], rb.xy[::step]
    sa, sb = ra.s[rows], rb.s[::step]
    if len(pa) == 0:
        return None
    d = np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1])
    d[sa < sa_min, :] = np.inf
    d[:, sb < sb_min] = np.inf
    i, j = np.unravel_index(int(np.argmin(d)), d.shape)
    if d[i, j] > 1.0:
        return None
    return float(sa[i]), float(sb[j])


def _time_conflict(rng, plans: list[AgentPlan], n_sub: int, hist_sub: int, cfg: GeneratorConfig) -> bool:
    """Retime one agent so its free rollout meets another agent's at a path crossing."""
    order = rng.permutation(len(plans))
    for ia in order:
        for ib in rng.permutation(len(plans)):
            if ia == ib or plans[ia].lane.key == plans[ib].lane.key:
                continue
            a, b = plans[ia], plans[ib]
            cross = _crossing_point(a.lane.route, b.lane.route, a.s0 + 1.0, 0.0)
            if cross is None:
                continue
            free_a = rollout(a, n_sub, cfg)
            ka = int(np.searchsorted(free_a.s, cross[0]))
            if not (hist_sub + 5 <= ka <= n_sub - 5):
                continue
            s0 = original = b.s0
            for _ in range(6):
                b.s0 = s0
                free_b = rollout(b, n_sub, cfg)
                miss = cross[1] - free_b.s[ka]
                if abs(miss) < 0.3:
                    break
                s0 = s0 + miss
            if not (max(b.lane.start_s - 30.0, 0.0) <= b.s0 <= b.lane.end_s + 5.0) or not _spaced(b, [p for p in plans if p is not b]):
                b.s0 = original
                continue
            return True
    return False


def gen_scene(seed: int, difficulty: str = "interactive", dims: SceneDims = SceneDims(), cfg: GeneratorConfig = GeneratorConfig()) -> SceneSample:
    """One labeled scene, a pure function of (seed, difficulty, dims, cfg)."""
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    stride = int(round(dims.step_seconds / cfg.sim_dt))
    hist_sub = (dims.history_steps - 1) * stride
    n_sub = hist_sub + dims.future_steps * stride
    future = slice(dims.history_steps, dims.history_steps + dims.future_steps)
    lo, hi = AGENT_COUNTS[difficulty]
    for attempt in range(cfg.max_attempts):
        rng = _scene_rng(seed, attempt)
        n_agents = int(rng.integers(lo, hi + 1))
        if difficulty == "free_flow":
            rmap, lanes = road_layout(cfg, dims.polyline_points, lane_change=False)
        elif rng.random() < cfg.lane_change_prob and difficulty == "interactive":
            rmap, lanes = road_layout(cfg, dims.polyline_points, lane_change=True)
        else:
            rmap, lanes = intersection_layout(cfg, dims.polyline_points)
        plans = _spawn(rng, lanes, n_agents, difficulty, cfg, (cfg.ego_length, cfg.ego_width))
        if plans is None:
            continue
        if difficulty != "free_flow" and not _time_conflict(rng, plans, n_sub, hist_sub, cfg):
            continue

        free = [rollout(p, n_sub, cfg) for p in plans]
        free_xy = np.stack([r.xy[::stride] for r in free])
        pairs = conflict_pairs(free_xy, cfg.conflict_radius, future)
        if (difficulty == "free_flow") == bool(pairs):
            continue

        # ego: an agent involved in a conflict half of the time when there is one
        if pairs and rng.random() < 0.5:
            ego = int(pairs[int(rng.integers(len(pairs)))][int(rng.integers(2))])
        else:
            ego = int(rng.integers(len(plans)))
        plans[ego].length, plans[ego].width = cfg.ego_length, cfg.ego_width

        order = _priority_order(plans, rng)
        rolled: dict[int, Rollout] = {}
        for i in order:
            others = [(rolled[j], plans[j].length, plans[j].width) for j in rolled]
            rolled[i] = rollout(plans[i], n_sub, cfg, others)
        rolls = [rolled[i] for i in range(len(plans))]
        if not all(feasible(r, stride, cfg) for r in rolls):
            continue
        xy = np.stack([r.xy[::stride] for r in rolls])
        hd = np.stack([r.heading[::stride] for r in rolls])
        box = np.array([[p.length, p.width] for p in plans])
        if boxes_collide(xy, hd, box):
            continue
        sample = _assemble(plans, rolls, order, ego, rmap, stride, dims, cfg, rng)
        if sample is None:
            continue
        sample.meta.update(seed=seed, difficulty=difficulty, attempt=attempt, conflict_pairs=len(pairs))
        return sample
    raise RuntimeError(f"scene generation failed for seed {seed} ({difficulty})")


def _command_from_future(fut: np.ndarray) -> Command:
    if np.hypot(*fut[-1]) < 1.0:
        return Command.GO_STRAIGHT
    d = fut[-1] - (fut[-2] if len(fut) > 1 else np.zeros(2))
    dh = math.atan2(d[1], d[0]) if np.hypot(*d) > 1e-3 else 0.0
    if dh > math.pi / 6 or fut[-1][1] > 5.0:
        return Command.TURN_LEFT
    if dh < -math.pi / 6 or fut[-1][1] < -5.0:
        return Command.TURN_RIGHT
    return Command.GO_STRAIGHT


def _assemble(plans, rolls, order, ego, rmap: RoadMap, stride: int, dims: SceneDims, cfg: GeneratorConfig, rng) -> SceneSample | None:
    # ids follow priority: lowest priority gets id 0
    rank = {agent: len(order) - 1 - k for k, agent in enumerate(order)}
    t_h = dims.history_steps
    agents, futures = [], []
    for i, (p, r) in enumerate(zip(plans, rolls)):
        hist = []
        for k in range(t_h):
            j = k * stride
            hist.append(
                AgentState(
                    (float(r.xy[j, 0]), float(r.xy[j, 1])),
                    wrap_angle(float(r.heading[j])),
                    float(r.v[j]),
                    float(r.a[j]),
                    float(r.yaw_rate[j]),
                    p.length,
                    p.width,
                )
            )
        agents.append(AgentTrack(rank[i], tuple(hist), i == ego))
        fut = r.xy[(t_h - 1) * stride + stride :: stride][: dims.future_steps]
        futures.append(tuple((float(x), float(y)) for x, y in fut))
    cur = agents[ego].current
    world = SceneSample(
        agents=tuple(agents),
        map=tuple(MapPolyline(kind, tuple((float(x), float(y)) for x, y in pts)) for kind, pts in rmap.elements),
        command=Command.GO_STRAIGHT,
        gt_futures=tuple(futures),
        gt_future_valid=tuple(tuple(True for _ in range(dims.future_steps)) for _ in agents),
    )
    scene = to_scene_frame(world, (cur.position, cur.heading))
    keep = [m for m in scene.map if min(math.hypot(x, y) for x, y in m.points) <= cfg.map_radius]
    fut_ego = np.asarray(scene.gt_futures[ego])
    noise_rng = np.random.default_rng(int(rng.integers(2**32)))
    out_agents = []
    for a in scene.agents:
        hist = []
        for k, st in enumerate(a.history):
            x, y = st.position
            if cfg.history_noise > 0 and not (a.is_ego and k == t_h - 1):
                x += float(noise_rng.normal(0.0, cfg.history_noise))
                y += float(noise_rng.normal(0.0, cfg.history_noise))
            hist.append(
                AgentState(
                    (quantize(x), quantize(y)),
                    wrap_angle(quantize(st.heading)),
                    quantize(st.speed),
                    quantize(st.acceleration),
                    quantize(st.yaw_rate),
                    quantize(st.box_length),
                    quantize(st.box_width),
                )
            )
        out_agents.append(AgentTrack(a.id, tuple(hist), a.is_ego))
    sample = SceneSample(
        agents=tuple(sorted(out_agents, key=lambda t: t.id)),
        map=tuple(MapPolyline(m.kind, tuple((quantize(x), quantize(y)) for x, y in m.points)) for m in keep),
        command=_command_from_future(fut_ego),
        gt_futures=tuple(tuple((quantize(x), quantize(y)) for x, y in f) for _, f in sorted(zip([a.id for a in scene.agents], scene.gt_futures))),
        gt_future_valid=scene.gt_future_valid,
    )
    try:
        validate_sample(sample, dims)
    except ValueError:
        return None
    return sample


# --------------------------------------------------------------- datasets


def is_validation_index(index: int) -> bool:
    """Deterministic 90/10 train/validation split by hashed index."""
    return hashlib.sha256(str(index).encode()).digest()[0] % 10 == 0


def _difficulty_for(index: int, seed: int, mix: dict[str, float]) -> str:
    names = sorted(mix)
    w = np.array([mix[n] for n in names], dtype=np.float64)
    if w.sum() <= 0:
        raise ValueError("difficulty mix has no weight")
    u = np.random.default_rng([seed & 0xFFFFFFFF, index, 17]).random()
    return names[int(np.searchsorted(np.cumsum(w / w.sum()), u, side="right").clip(0, len(names) - 1))]


def gen_dataset(
    n: int,
    seed: int = 0,
    mix: dict[str, float] | str = "interactive",
    dims: SceneDims = SceneDims(),
    cfg: GeneratorConfig = GeneratorConfig(),
) -> list[SceneSample]:
    """``n`` scenes with seeds ``seed + i``; ``mix`` is a difficulty name or weights per difficulty."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(mix, str):
        mix = {mix: 1.0}
    for k in mix:
        if k not in DIFFICULTIES:
            raise ValueError(f"unknown difficulty {k!r}")
    return [gen_scene(seed + i, _difficulty_for(i, seed, mix), dims, cfg) for i in range(n)]


def split_dataset(samples: Sequence[SceneSample]) -> tuple[list[SceneSample], list[SceneSample]]:
    train = [s for i, s in enumerate(samples) if not is_validation_index(i)]
    val = [s for i, s in enumerate(samples) if is_validation_index(i)]
    return train, val
