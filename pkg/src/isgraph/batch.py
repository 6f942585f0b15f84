"""Numeric preprocessing of scenes into arrays the networks consume.

Everything learned sees coordinates in an agent's own frame (origin at the
current position, x-axis along the heading) or in a polyline's own frame,
so predictions are unaffected by a rigid motion of the whole scene.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import path_headings, to_local
from .scene import COMMANDS, MAP_KINDS, SceneDims, SceneSample

SPEED_SCALE = 10.0
ACCEL_SCALE = 4.0
YAW_RATE_SCALE = 0.6
BOX_SCALE = 5.0
RESOLUTION = 1e-6  # scaled feature values below this are rotation round-off of quantized data


def _snap(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < RESOLUTION, 0.0, x)


def history_feature_dim(dims: SceneDims) -> int:
    return 7 * dims.history_steps + 2


def polyline_feature_dim(dims: SceneDims) -> int:
    return 2 * dims.polyline_points + len(MAP_KINDS)


def ego_status_dim(dims: SceneDims) -> int:
    return 3 + 2 * dims.history_steps


@dataclass
class PreparedScene:
    n_agents: int
    ego: int
    command: int
    pos: np.ndarray  # (A, 2) current positions, scene frame
    heading: np.ndarray  # (A,)
    box: np.ndarray  # (A, 2) length, width
    hist_feat: np.ndarray  # (A, F_h)
    poly: np.ndarray  # (S, M_s, 2) scene frame
    poly_feat: np.ndarray  # (S, F_s)
    ego_status: np.ndarray  # (F_e,)
    gt: np.ndarray  # (A, M_d, 2)
    valid: np.ndarray  # (A, M_d)
    gt_heading: np.ndarray  # (A, M_d)
    speed: np.ndarray  # (A,)


def prepare_scene(sample: SceneSample, dims: SceneDims, coord_scale: float = 10.0) -> PreparedScene:
    a = len(sample.agents)
    pos = np.array([t.current.position for t in sample.agents], dtype=np.float64).reshape(a, 2)
    heading = np.array([t.current.heading for t in sample.agents], dtype=np.float64)
    box = np.array([[t.current.box_length, t.current.box_width] for t in sample.agents], dtype=np.float64).reshape(a, 2)
    speed = np.array([t.current.speed for t in sample.agents], dtype=np.float64)

    hist = np.zeros((a, history_feature_dim(dims)))
    for i, track in enumerate(sample.agents):
        hp = np.array([s.position for s in track.history], dtype=np.float64)
        loc = to_local(hp, pos[i], heading[i]) / coord_scale
        dh = np.array([s.heading for s in track.history]) - heading[i]
        per = np.stack(
            [
                loc[:, 0],
                loc[:, 1],
                np.cos(dh),
                np.sin(dh),
                np.array([s.speed for s in track.history]) / SPEED_SCALE,
                np.array([s.acceleration for s in track.history]) / ACCEL_SCALE,
                np.array([s.yaw_rate for s in track.history]) / YAW_RATE_SCALE,
            ],
            axis=-1,
        )
        hist[i, :-2] = _snap(per.reshape(-1))
        hist[i, -2:] = box[i] / BOX_SCALE

    s = len(sample.map)
    poly = np.array([m.points for m in sample.map], dtype=np.float64).reshape(s, dims.polyline_points, 2)
    poly_feat = np.zeros((s, polyline_feature_dim(dims)))
    for j, m in enumerate(sample.map):
        pts = poly[j]
        centroid = pts.mean(axis=0)
        d = pts[-1] - pts[0]
        theta = float(np.arctan2(d[1], d[0]))
        poly_feat[j, : 2 * dims.polyline_points] = _snap((to_local(pts, centroid, theta) / coord_scale).reshape(-1))
        poly_feat[j, 2 * dims.polyline_points + MAP_KINDS.index(m.kind)] = 1.0

    ego = sample.ego_index
    et = sample.agents[ego]
    ego_hist = np.array([st.position for st in et.history], dtype=np.float64)
    ego_status = _snap(np.concatenate(
        [
            [et.current.speed / SPEED_SCALE, et.current.acceleration / ACCEL_SCALE, et.current.yaw_rate / YAW_RATE_SCALE],
            (to_local(ego_hist, pos[ego], heading[ego]) / coord_scale).reshape(-1),
        ]
    ))

    gt = sample.futures_array()
    valid = sample.valid_array()
    gt_heading = np.stack([path_headings(pos[i], heading[i], gt[i]) for i in range(a)]) if a else np.zeros((0, dims.future_steps))
    return PreparedScene(
        n_agents=a,
        ego=ego,
        command=COMMANDS.index(sample.command),
        pos=pos,
        heading=heading,
        box=box,
        hist_feat=hist,
        poly=poly,
        poly_feat=poly_feat,
        ego_status=ego_status,
        gt=gt,
        valid=valid,
        gt_heading=gt_heading,
        speed=speed,
    )


@dataclass
class SceneBatch:
    """Several prepared scenes concatenated along the agent / polyline axes."""

    scenes: list[PreparedScene]
    agent_offset: np.ndarray  # (B + 1,)
    poly_offset: np.ndarray  # (B + 1,)
    pos: np.ndarray
    heading: np.ndarray
    hist_feat: np.ndarray
    poly: np.ndarray
    poly_feat: np.ndarray
    ego_status: np.ndarray  # (B, F_e)
    ego_global: np.ndarray  # (B,) global agent index of each ego
    command: np.ndarray  # (B,)
    agent_scene: np.ndarray  # (A_total,)

    @property
    def n_scenes(self) -> int:
        return len(self.scenes)

    @property
    def n_agents(self) -> int:
        return int(self.agent_offset[-1])

    @property
    def n_polys(self) -> int:
        return int(self.poly_offset[-1])

    @classmethod
    def from_prepared(cls, scenes: Sequence[PreparedScene], dims: SceneDims) -> "SceneBatch":
        scenes = list(scenes)
        a_off = np.concatenate([[0], np.cumsum([s.n_agents for s in scenes])]).astype(np.int64)
        p_off = np.concatenate([[0], np.cumsum([len(s.poly) for s in scenes])]).astype(np.int64)

        def cat(attr, shape_tail):
            arrs = [getattr(s, attr) for s in scenes]
            return np.concatenate(arrs) if arrs else np.zeros((0, *shape_tail))

        return cls(
            scenes=scenes,
            agent_offset=a_off,
            poly_offset=p_off,
            pos=cat("pos", (2,)),
            heading=cat("heading", ()),
            hist_feat=cat("hist_feat", (history_feature_dim(dims),)),
            poly=cat("poly", (dims.polyline_points, 2)),
            poly_feat=cat("poly_feat", (polyline_feature_dim(dims),)),
            ego_status=np.stack([s.ego_status for s in scenes]) if scenes else np.zeros((0, ego_status_dim(dims))),
            ego_global=np.array([a_off[i] + s.ego for i, s in enumerate(scenes)], dtype=np.int64),
            command=np.array([s.command for s in scenes], dtype=np.int64),
            agent_scene=np.repeat(np.arange(len(scenes)), [s.n_agents for s in scenes]).astype(np.int64),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[SceneSample], dims: SceneDims, coord_scale: float = 10.0) -> "SceneBatch":
        return cls.from_prepared([prepare_scene(s, dims, coord_scale) for s in samples], dims)


def command_count() -> int:
    return len(COMMANDS)
