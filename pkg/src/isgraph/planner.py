"""Ego planning head and occupancy-based post-optimization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import MlpSpec, ParamStore, Tape, Var
from .batch import ego_status_dim
from .geometry import path_headings, points_in_box
from .scene import COMMANDS, SceneDims, SceneSample


@dataclass(frozen=True)
class PlannerConfig:
    plan_steps: int = 6  # M_p, 3 s at 0.5 s
    command_dim: int = 16
    use_graph: bool = True
    use_ego_status: bool = True
    post_optimize: bool = True
    grid_cells: int = 200  # H_o = W_o
    cell_size: float = 0.5
    weight: float = 10.0  # lambda
    d_safe: float = 1.0
    iterations: int = 20
    trust_radius: float = 2.5
    fd_step: float = 0.25
    ego_length: float = 4.0
    ego_width: float = 1.9
    footprint_circles: int = 3  # circles covering the ego box; 0 measures clearance at the waypoint only
    continuity_slack: float = 3.0


@dataclass(frozen=True)
class EgoStatus:
    speed: float
    acceleration: float
    yaw_rate: float
    history: np.ndarray  # (T_h, 2) ego-frame positions, oldest first

    @classmethod
    def from_sample(cls, sample: SceneSample) -> "EgoStatus":
        ego = sample.agents[sample.ego_index]
        cur = ego.current
        return cls(cur.speed, cur.acceleration, cur.yaw_rate, np.array([s.position for s in ego.history], dtype=np.float64))


def init_planner_params(config: PlannerConfig, width: int, dims: SceneDims, seed: int = 0, store: ParamStore | None = None) -> ParamStore:
    store = ParamStore() if store is None else store
    rng = np.random.default_rng(seed + 7919)
    ad.init_mlp(store, "status", MlpSpec((ego_status_dim(dims), width, width)), rng)
    store.add("command", rng.normal(0.0, 1.0, size=(len(COMMANDS), config.command_dim)))
    ad.init_mlp(store, "plan", MlpSpec((2 * width + config.command_dim, width, 2 * config.plan_steps)), rng, out_scale=0.1)
    return store


def encode_ego_status(status_feat: np.ndarray, params: ParamStore, tape: Tape) -> Var:
    """Perceptron over ``[speed, accel, yaw rate, flattened history]`` rows (already scaled)."""
    w = params["status.0.weight"].shape[1]
    spec = MlpSpec((params["status.0.weight"].shape[0], w, params["status.1.weight"].shape[1]))
    return ad.mlp_forward(spec, params, "status", tape.const(np.atleast_2d(status_feat)), tape)


def plan(
    ego_feature: Var | None,
    status_feature: Var | None,
    command: np.ndarray,
    params: ParamStore,
    config: PlannerConfig,
    tape: Tape,
    coord_scale: float = 10.0,
) -> Var:
    """Waypoints ``(B, M_p, 2)`` in the ego frame from graph feature, status feature and command.

    A disabled or missing feature group is fed as zeros.
    """
    command = np.atleast_1d(np.asarray(command, dtype=np.int64))
    b = len(command)
    width = params["status.1.weight"].shape[1]
    zeros = tape.const(np.zeros((b, width)))
    g = ego_feature if (ego_feature is not None and config.use_graph) else zeros
    s = status_feature if (status_feature is not None and config.use_ego_status) else zeros
    cmd = ad.gather(tape.param(params, "command"), command)
    x = ad.concat([g, s, cmd], axis=1)
    spec = MlpSpec((x.shape[1], width, 2 * config.plan_steps))
    out = ad.mlp_forward(spec, params, "plan", x, tape)
    return ad.mul(ad.reshape(out, (b, config.plan_steps, 2)), coord_scale)


def plan_is_continuous(waypoints: np.ndarray, speed: float, config: PlannerConfig, step_seconds: float = 0.5) -> bool:
    """First displacement within ``speed * dt * slack`` (plus one box length for a standing start)."""
    first = float(np.hypot(*waypoints[0]))
    return bool(np.all(np.isfinite(waypoints))) and first <= speed * step_seconds * config.continuity_slack + config.ego_length


# ---------------------------------------------------------------- occupancy


@dataclass
class OccupancyGrid:
    """Per-step boolean grids around the ego plus exact Euclidean distance fields.

    Cell ``(i, j)`` has its center at ``(-half + (i + 0.5) * cell, -half + (j + 0.5) * cell)``.
    ``distance`` is the distance to the nearest occupied cell (0 on occupied
    cells); ``interior`` is the distance to the nearest free cell (0 on free
    cells).  Their difference is a signed field whose gradient also points
    out of occupied regions.
    """

    occupied: np.ndarray  # (steps, H, W) bool
    distance: np.ndarray  # (steps, H, W) meters
    cell: float
    interior: np.ndarray | None = None  # (steps, H, W) meters

    def __post_init__(self):
        if self.interior is None:
            self.interior = np.zeros_like(self.distance)

    @property
    def half_extent(self) -> float:
        return self.occupied.shape[1] * self.cell / 2.0

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.occupied.shape[1:]
        xs = -self.half_extent + (np.arange(h) + 0.5) * self.cell
        ys = -self.half_extent + (np.arange(w) + 0.5) * self.cell
        return xs, ys

    def max_distance(self) -> float:
        h, w = self.occupied.shape[1:]
        return float(np.hypot(h, w) * self.cell)

    def _bilinear(self, field: np.ndarray, point: np.ndarray) -> float:
        h, w = field.shape
        u = (point[0] + self.half_extent) / self.cell - 0.5
        v = (point[1] + self.half_extent) / self.cell - 0.5
        u = min(max(u, 0.0), h - 1.0)
        v = min(max(v, 0.0), w - 1.0)
        i0, j0 = int(np.floor(u)), int(np.floor(v))
        i1, j1 = min(i0 + 1, h - 1), min(j0 + 1, w - 1)
        fu, fv = u - i0, v - j0
        d = field
        return float((1 - fu) * (1 - fv) * d[i0, j0] + fu * (1 - fv) * d[i1, j0] + (1 - fu) * fv * d[i0, j1] + fu * fv * d[i1, j1])

    def sample(self, step: int, point: np.ndarray) -> float:
        """Bilinear interpolation of the distance field, clamped at the grid edge."""
        return self._bilinear(self.distance[step], point)

    def signed(self, step: int, point: np.ndarray) -> float:
        """Interpolated ``distance - interior``: negative inside occupied space."""
        return self._bilinear(self.distance[step], point) - self._bilinear(self.interior[step], point)


def distance_transform(occupied: np.ndarray, cell: float) -> np.ndarray:
    """Exact Euclidean distance (meters) from each cell center to the nearest occupied one."""
    if not occupied.any():
        return np.full(occupied.shape, float(np.hypot(*occupied.shape) * cell))
    return ndimage.distance_transform_edt(~occupied) * cell


def interior_distance(occupied: np.ndarray, cell: float) -> np.ndarray:
    """Distance from each occupied cell center to the nearest free one; 0 on free cells."""
    return np.where(occupied, distance_transform(~occupied, cell), 0.0)


def build_occupancy(
    trajectories: np.ndarray,
    boxes: np.ndarray,
    start_pos: np.ndarray,
    start_heading: np.ndarray,
    config: PlannerConfig,
    steps: int | None = None,
) -> OccupancyGrid:
    """Rasterize one predicted trajectory per agent (``(A, T, 2)``, ego frame) into per-step grids.

    A cell is occupied iff its center lies inside an agent box; box heading
    follows consecutive trajectory points.
    """
    steps = config.plan_steps if steps is None else steps
    n = config.grid_cells
    occ = np.zeros((steps, n, n), dtype=bool)
    cell = config.cell_size
    half = n * cell / 2.0
    centers = -half + (np.arange(n) + 0.5) * cell
    for a in range(len(trajectories)):
        heads = path_headings(start_pos[a], start_heading[a], trajectories[a])
        length, width = boxes[a]
        r = 0.5 * float(np.hypot(length, width))
        for t in range(steps):
            cx, cy = trajectories[a, t]
            i0 = max(int(np.floor((cx - r + half) / cell)), 0)
            i1 = min(int(np.ceil((cx + r + half) / cell)), n)
            j0 = max(int(np.floor((cy - r + half) / cell)), 0)
            j1 = min(int(np.ceil((cy + r + half) / cell)), n)
            if i0 >= i1 or j0 >= j1:
                continue
            gx, gy = np.meshgrid(centers[i0:i1], centers[j0:j1], indexing="ij")
            inside = points_in_box(np.stack([gx, gy], axis=-1), (cx, cy), heads[t], length, width)
            occ[t, i0:i1, j0:j1] |= inside
    dist = np.stack([distance_transform(occ[t], cell) for t in range(steps)]) if steps else np.zeros((0, n, n))
    inner = np.stack([interior_distance(occ[t], cell) for t in range(steps)]) if steps else np.zeros((0, n, n))
    return OccupancyGrid(occ, dist, cell, inner)


def format_plan_dump(waypoints: np.ndarray, optimized: np.ndarray, grid: OccupancyGrid) -> list[str]:
    """Plan before and after post-optimization, then each step's occupied cells as row runs ``i | j0-j1 ...``."""
    steps, h, w = grid.occupied.shape
    lines = [f"# plan steps={len(waypoints)}"]
    for t, (a, b) in enumerate(zip(waypoints, optimized)):
        lines.append(f"{t} | {a[0]:.6f} {a[1]:.6f} | {b[0]:.6f} {b[1]:.6f}")
    for t in range(steps):
        lines.append(f"# occupancy step={t} rows={h} cols={w} cell={grid.cell:g} occupied={int(grid.occupied[t].sum())}")
        for i in np.nonzero(grid.occupied[t].any(axis=1))[0]:
            row = np.concatenate([[False], grid.occupied[t, i], [False]])
            edges = np.nonzero(np.diff(row.astype(np.int8)))[0]
            runs = " ".join(f"{a}-{b - 1}" for a, b in zip(edges[::2], edges[1::2]))
            lines.append(f"{i} | {runs}")
    return lines


def parse_occupancy_dump(lines: list[str]) -> np.ndarray:
    """Occupied cells ``(steps, H, W)`` read back from :func:`format_plan_dump` output."""
    grids: list[np.ndarray] = []
    for line in lines:
        if line.startswith("# occupancy"):
            fields = dict(kv.split("=") for kv in line.split()[2:])
            grids.append(np.zeros((int(fields["rows"]), int(fields["cols"])), dtype=bool))
        elif grids and line.strip():
            i, runs = line.split("|")
            for run in runs.split():
                a, b = run.split("-")
                grids[-1][int(i), int(a) : int(b) + 1] = True
    return np.stack(grids) if grids else np.zeros((0, 0, 0), dtype=bool)


def footprint_circles(config: PlannerConfig) -> tuple[np.ndarray, float]:
    """Offsets along the heading and common radius of circles that cover the ego box."""
    n = config.footprint_circles
    if n <= 0:
        return np.zeros(1), 0.0
    seg = config.ego_length / n
    return -config.ego_length / 2 + (np.arange(n) + 0.5) * seg, float(np.hypot(seg / 2, config.ego_width / 2))


def waypoint_penalty(grid: OccupancyGrid, step: int, point: np.ndarray, heading: float, config: PlannerConfig) -> float:
    """``sum_k max(0, d_safe - clearance_k)^2`` over the footprint circles placed at ``point``."""
    offsets, radius = footprint_circles(config)
    axis = np.array([np.cos(heading), np.sin(heading)])
    total = 0.0
    for o in offsets:
        total += max(0.0, config.d_safe + radius - grid.signed(step, point + o * axis)) ** 2
    return total


def plan_headings(waypoints: np.ndarray) -> np.ndarray:
    """Heading of the ego box at each waypoint, from the ego at the origin facing +x."""
    return path_headings(np.zeros(2), 0.0, waypoints)


def plan_objective(waypoints: np.ndarray, original: np.ndarray, grid: OccupancyGrid, config: PlannerConfig) -> tuple[float, float]:
    """(total objective, collision-penalty term) for a plan; the box headings follow ``original``."""
    heads = plan_headings(original)
    pen = sum(waypoint_penalty(grid, t, p, heads[t], config) for t, p in enumerate(waypoints[: grid.occupied.shape[0]]))
    fit = float(np.sum((waypoints - original) ** 2))
    return fit + config.weight * pen, config.weight * pen


def post_optimize(waypoints: np.ndarray, grid: OccupancyGrid, config: PlannerConfig) -> np.ndarray:
    """Push waypoints away from occupied space by per-waypoint descent.

    Minimizes ``sum |p - p0|^2 + lambda * sum_t penalty_t(p_t)`` where the
    penalty asks every footprint circle for ``d_safe`` of clearance in the
    interpolated signed distance field; box headings stay those of the
    original plan and gradients are central differences.  A step is kept
    only if it lowers that waypoint's objective without raising its penalty;
    each waypoint stays within the trust radius of where it started.
    """
    original = np.asarray(waypoints, dtype=np.float64)
    p = original.copy()
    heads = plan_headings(original)
    steps = min(len(p), grid.occupied.shape[0])
    h = config.fd_step
    for _ in range(config.iterations):
        moved = False
        for t in range(steps):
            pen = waypoint_penalty(grid, t, p[t], heads[t], config)
            if pen == 0.0:
                continue
            gx = (waypoint_penalty(grid, t, p[t] + (h, 0.0), heads[t], config) - waypoint_penalty(grid, t, p[t] - (h, 0.0), heads[t], config)) / (2 * h)
            gy = (waypoint_penalty(grid, t, p[t] + (0.0, h), heads[t], config) - waypoint_penalty(grid, t, p[t] - (0.0, h), heads[t], config)) / (2 * h)
            grad = 2.0 * (p[t] - original[t]) + config.weight * np.array([gx, gy])
            norm = float(np.hypot(*grad))
            if norm == 0.0:
                continue
            cur = float(np.sum((p[t] - original[t]) ** 2)) + config.weight * pen
            step = 1.0
            while step >= 1.0 / 64:
                cand = p[t] - step * grad / norm
                off = cand - original[t]
                r = float(np.hypot(*off))
                if r > config.trust_radius:
                    cand = original[t] + off * (config.trust_radius / r)
                cpen = waypoint_penalty(grid, t, cand, heads[t], config)
                cobj = float(np.sum((cand - original[t]) ** 2)) + config.weight * cpen
                if cobj < cur and cpen <= pen:
                    p[t] = cand
                    moved = True
                    break
                step *= 0.5
        if not moved:
            break
    return p
