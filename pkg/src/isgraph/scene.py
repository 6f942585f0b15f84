"""Structured driving scenes and their line-delimited dataset format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_NAME = "isg-scenes"
FORMAT_VERSION = 1
SIG_DIGITS = 9

Point = tuple[float, float]


class SceneValidationError(ValueError):
    pass


class MapKind(str, Enum):
    CENTERLINE = "centerline"
    DIVIDER = "divider"
    BOUNDARY = "boundary"
    CROSSING = "crossing"


class Command(str, Enum):
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    GO_STRAIGHT = "go_straight"


MAP_KINDS = tuple(MapKind)
COMMANDS = tuple(Command)


@dataclass(frozen=True)
class SceneDims:
    history_steps: int = 4  # T_h
    future_steps: int = 12  # M_d
    polyline_points: int = 20  # M_s
    step_seconds: float = 0.5


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class AgentState:
    position: Point
    heading: float
    speed: float
    acceleration: float
    yaw_rate: float
    box_length: float
    box_width: float

    def validate(self) -> None:
        vals = (*self.position, self.heading, self.speed, self.acceleration, self.yaw_rate, self.box_length, self.box_width)
        if not all(math.isfinite(v) for v in vals):
            raise SceneValidationError("non-finite agent state")
        if not (-math.pi < self.heading <= math.pi):
            raise SceneValidationError(f"heading out of range: {self.heading}")
        if self.speed < 0:
            raise SceneValidationError(f"negative speed: {self.speed}")
        if self.box_length <= 0 or self.box_width <= 0:
            raise SceneValidationError("box dimensions must be positive")


@dataclass(frozen=True)
class AgentTrack:
    id: int
    history: tuple[AgentState, ...]  # oldest first
    is_ego: bool = False

    @property
    def current(self) -> AgentState:
        return self.history[-1]


@dataclass(frozen=True)
class MapPolyline:
    kind: MapKind
    points: tuple[Point, ...]


@dataclass(frozen=True)
class SceneSample:
    agents: tuple[AgentTrack, ...]
    map: tuple[MapPolyline, ...]
    command: Command
    gt_futures: tuple[tuple[Point, ...], ...]
    gt_future_valid: tuple[tuple[bool, ...], ...]
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def ego_index(self) -> int:
        for i, a in enumerate(self.agents):
            if a.is_ego:
                return i
        raise SceneValidationError("scene has no ego agent")

    def futures_array(self) -> np.ndarray:
        return np.asarray(self.gt_futures, dtype=np.float64).reshape(len(self.agents), -1, 2)

    def valid_array(self) -> np.ndarray:
        return np.asarray(self.gt_future_valid, dtype=bool).reshape(len(self.agents), -1)


def validate_sample(sample: SceneSample, dims: SceneDims = SceneDims()) -> None:
    """Raise :class:`SceneValidationError` if any scene invariant fails."""
    if not sample.agents:
        raise SceneValidationError("scene has no agents")
    n_ego = sum(a.is_ego for a in sample.agents)
    if n_ego != 1:
        raise SceneValidationError(f"expected exactly one ego agent, found {n_ego}")
    ids = [a.id for a in sample.agents]
    if len(set(ids)) != len(ids):
        raise SceneValidationError("duplicate agent ids")
    for a in sample.agents:
        if len(a.history) != dims.history_steps:
            raise SceneValidationError(f"agent {a.id}: history length {len(a.history)} != {dims.history_steps}")
        for s in a.history:
            s.validate()
    if not isinstance(sample.command, Command):
        raise SceneValidationError(f"unknown command {sample.command!r}")
    if len(sample.gt_futures) != len(sample.agents) or len(sample.gt_future_valid) != len(sample.agents):
        raise SceneValidationError("one future per agent required")
    for fut, valid in zip(sample.gt_futures, sample.gt_future_valid):
        if len(fut) != dims.future_steps:
            raise SceneValidationError(f"future length {len(fut)} != {dims.future_steps}")
        if len(valid) != dims.future_steps:
            raise SceneValidationError(f"validity length {len(valid)} != {dims.future_steps}")
        if not all(math.isfinite(c) for p in fut for c in p):
            raise SceneValidationError("non-finite future position")
    for poly in sample.map:
        if not isinstance(poly.kind, MapKind):
            raise SceneValidationError(f"unknown map kind {poly.kind!r}")
        if len(poly.points) != dims.polyline_points:
            raise SceneValidationError(f"polyline has {len(poly.points)} points, expected {dims.polyline_points}")
        if not all(math.isfinite(c) for p in poly.points for c in p):
            raise SceneValidationError("non-finite polyline point")
        for p, q in zip(poly.points, poly.points[1:]):
            if p == q:
                raise SceneValidationError("polyline has repeated consecutive points")


# ------------------------------------------------------------------ frames


def _transform_point(p: Point, c: float, s: float, ox: float, oy: float) -> Point:
    dx, dy = p[0] - ox, p[1] - oy
    return (c * dx + s * dy, -s * dx + c * dy)


def to_scene_frame(sample: SceneSample, pose: tuple[Point, float]) -> SceneSample:
    """Express the sample in the frame whose origin/heading is ``pose`` (given in the current frame)."""
    (ox, oy), theta = pose
    c, s = math.cos(theta), math.sin(theta)

    def tp(p: Point) -> Point:
        return _transform_point(p, c, s, ox, oy)

    agents = tuple(
        replace(a, history=tuple(replace(st, position=tp(st.position), heading=wrap_angle(st.heading - theta)) for st in a.history))
        for a in sample.agents
    )
    polys = tuple(replace(m, points=tuple(tp(p) for p in m.points)) for m in sample.map)
    futures = tuple(tuple(tp(p) for p in fut) for fut in sample.gt_futures)
    return replace(sample, agents=agents, map=polys, gt_futures=futures)


def inverse_pose(pose: tuple[Point, float]) -> tuple[Point, float]:
    """Pose of the original frame expressed in the frame defined by ``pose``."""
    (ox, oy), theta = pose
    c, s = math.cos(theta), math.sin(theta)
    return ((-(c * ox + s * oy), -(-s * ox + c * oy)), -theta)


# ------------------------------------------------------------- serialization


def quantize(x: float) -> float:
    """Round to the precision the dataset format stores."""
    return float(f"{x:.{SIG_DIGITS}g}")


def _q(x: float) -> float:
    return quantize(float(x))


def sample_to_record(sample: SceneSample) -> dict:
    return {
        "command": sample.command.value,
        "agents": [
            {
                "id": a.id,
                "is_ego": a.is_ego,
                "history": [
                    [_q(s.position[0]), _q(s.position[1]), _q(s.heading), _q(s.speed), _q(s.acceleration), _q(s.yaw_rate), _q(s.box_length), _q(s.box_width)]
                    for s in a.history
                ],
            }
            for a in sample.agents
        ],
        "map": [{"kind": m.kind.value, "points": [[_q(x), _q(y)] for x, y in m.points]} for m in sample.map],
        "gt_futures": [[[_q(x), _q(y)] for x, y in fut] for fut in sample.gt_futures],
        "gt_future_valid": [[int(v) for v in valid] for valid in sample.gt_future_valid],
    }


def record_to_sample(rec: dict) -> SceneSample:
    agents = []
    for a in rec["agents"]:
        hist = tuple(
            AgentState((float(h[0]), float(h[1])), float(h[2]), float(h[3]), float(h[4]), float(h[5]), float(h[6]), float(h[7]))
            for h in a["history"]
        )
        agents.append(AgentTrack(int(a["id"]), hist, bool(a["is_ego"])))
    try:
        command = Command(rec["command"])
    except ValueError:
        raise SceneValidationError(f"unknown command {rec['command']!r}") from None
    polys = []
    for m in rec["map"]:
        try:
            kind = MapKind(m["kind"])
        except ValueError:
            raise SceneValidationError(f"unknown map kind {m['kind']!r}") from None
        polys.append(MapPolyline(kind, tuple((float(x), float(y)) for x, y in m["points"])))
    return SceneSample(
        agents=tuple(agents),
        map=tuple(polys),
        command=command,
        gt_futures=tuple(tuple((float(x), float(y)) for x, y in fut) for fut in rec["gt_futures"]),
        gt_future_valid=tuple(tuple(bool(v) for v in valid) for valid in rec["gt_future_valid"]),
    )


def _header(dims: SceneDims, generator: dict | None) -> dict:
    h = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "M_d": dims.future_steps,
        "M_s": dims.polyline_points,
        "T_h": dims.history_steps,
        "step_seconds": dims.step_seconds,
    }
    if generator is not None:
        h["generator"] = generator
    return h


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_dataset(samples: Sequence[SceneSample], path: str | Path, dims: SceneDims = SceneDims(), generator: dict | None = None) -> int:
    """Write ``samples`` (header line + one record per line); returns the record count."""
    path = Path(path)
    lines = [dumps_line(_header(dims, generator))]
    lines.extend(dumps_line(sample_to_record(s)) for s in samples)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc
    return len(samples)


def read_header(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.loads(fh.readline())


def load_dataset(path: str | Path) -> list[SceneSample]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise type(exc)(f"cannot read dataset {path}: {exc.strerror or exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise SceneValidationError(f"{path}: empty file, missing header")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
        raise SceneValidationError(f"{path}: unrecognized format/version {header.get('format')!r}/{header.get('version')!r}")
    dims = SceneDims(int(header["T_h"]), int(header["M_d"]), int(header["M_s"]), float(header["step_seconds"]))
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            sample = record_to_sample(json.loads(line))
            validate_sample(sample, dims)
        except SceneValidationError as exc:
            raise SceneValidationError(f"{path}:{lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise SceneValidationError(f"{path}:{lineno}: malformed record ({exc})") from None
        out.append(sample)
    return out

