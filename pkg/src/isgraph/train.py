"""Losses, metrics, the training loop and the ablation runner."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .batch import PreparedScene, SceneBatch, prepare_scene
from .geometry import boxes_overlap, path_headings
from .network import AnchorSet, IsgConfig, ModalityOutput, ego_graph_feature, fit_anchors, init_isg_params, isg_forward, local_futures
from .planner import PlannerConfig, build_occupancy, encode_ego_status, init_planner_params, plan, post_optimize
from .scene import SceneDims, SceneSample

LOG_VERSION = 1
TABLE_VERSION = 1
MISS_THRESHOLD = 2.0
HORIZONS = (1, 2, 3)  # seconds


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


# -------------------------------------------------------------------- losses


def best_modes(traj: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the lowest-ADE mode per agent over valid steps, and which agents have any valid step.

    ``traj (A, M, T, 2)``, ``gt (A, T, 2)``, ``valid (A, T)``; ties go to the lower mode.
    """
    err = np.sqrt(((traj - gt[:, None]) ** 2).sum(axis=-1))  # (A, M, T)
    n_valid = valid.sum(axis=1)
    has = n_valid > 0
    ade = (err * valid[:, None, :]).sum(axis=2) / np.maximum(n_valid, 1)[:, None]
    return np.argmin(ade, axis=1), has


def _regression(x: Var, kind: str) -> Var:
    if kind == "smooth_l1":
        return ad.smooth_l1(x, 1.0)
    if kind == "l1":
        return ad.abs_(x)
    raise ValueError(f"unknown regression loss {kind!r}")


def layer_motion_loss(out: ModalityOutput, gt: np.ndarray, valid: np.ndarray, regression: str = "smooth_l1") -> Var:
    """Winner-takes-all loss for one layer: regression on the best mode plus its cross-entropy."""
    tape = out.trajectories.tape
    a, m, t, _ = out.trajectories.shape
    best, has = best_modes(out.trajectories.value, gt, valid)
    keep = np.nonzero(has)[0]
    if keep.size == 0:
        return tape.const(np.zeros(()))
    flat = ad.reshape(out.trajectories, (a * m, t, 2))
    sel = ad.gather(flat, keep * m + best[keep])  # (A', T, 2)
    diff = ad.sub(sel, gt[keep])
    w = valid[keep].astype(np.float64) / valid[keep].sum(axis=1, keepdims=True) / keep.size
    reg = ad.sum_(ad.mul(_regression(diff, regression), w[:, :, None]))
    logp = ad.reshape(ad.log_softmax(out.logits, axis=1), (a * m,))
    ce = ad.mul(ad.sum_(ad.gather(logp, keep * m + best[keep])), -1.0 / keep.size)
    return ad.add(reg, ce)


def motion_loss(outputs: Sequence[ModalityOutput], gt: np.ndarray, valid: np.ndarray, regression: str = "smooth_l1") -> Var:
    """Deep supervision: the per-layer loss summed over every layer."""
    if not outputs:
        raise ValueError("no layer outputs")
    total = layer_motion_loss(outputs[0], gt, valid, regression)
    for out in outputs[1:]:
        total = ad.add(total, layer_motion_loss(out, gt, valid, regression))
    return total


def plan_loss(waypoints: Var, gt: np.ndarray, valid: np.ndarray | None = None) -> Var:
    """Smooth-L1 summed over coordinates, averaged over valid (sample, step) pairs."""
    b, t, _ = waypoints.shape
    valid = np.ones((b, t), dtype=bool) if valid is None else valid
    n = max(int(valid.sum()), 1)
    w = valid.astype(np.float64)[:, :, None] / n
    return ad.sum_(ad.mul(ad.smooth_l1(ad.sub(waypoints, gt), 1.0), w))


# ------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MotionMetrics:
    min_ade: float
    min_fde: float
    miss_rate: float
    agents: int = 0


@dataclass(frozen=True)
class PlanMetrics:
    l2: tuple[float, float, float]
    collision: tuple[float, float, float]
    samples: int = 0

    @property
    def l2_avg(self) -> float:
        return float(np.mean(self.l2))

    @property
    def collision_avg(self) -> float:
        return float(np.mean(self.collision))

    def as_dict(self) -> dict:
        out = {f"l2_{h}s": v for h, v in zip(HORIZONS, self.l2)}
        out["l2_avg"] = self.l2_avg
        out.update({f"col_{h}s": v for h, v in zip(HORIZONS, self.collision)})
        out["col_avg"] = self.collision_avg
        return out


def motion_errors(traj: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent (minADE, minFDE) for agents with at least one valid step."""
    err = np.sqrt(((traj - gt[:, None]) ** 2).sum(axis=-1))  # (A, M, T)
    n_valid = valid.sum(axis=1)
    has = n_valid > 0
    ade = (err * valid[:, None, :]).sum(axis=2) / np.maximum(n_valid, 1)[:, None]
    last = valid.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    fde = err[np.arange(len(err)), :, last]  # (A, M)
    return ade.min(axis=1)[has], fde.min(axis=1)[has]


def motion_metrics_from_errors(ade: np.ndarray, fde: np.ndarray, miss: float = MISS_THRESHOLD) -> MotionMetrics:
    if len(ade) == 0:
        return MotionMetrics(0.0, 0.0, 0.0, 0)
    return MotionMetrics(float(ade.mean()), float(fde.mean()), float((fde > miss).mean()), int(len(ade)))


def motion_metrics(traj: np.ndarray, gt: np.ndarray, valid: np.ndarray, miss: float = MISS_THRESHOLD) -> MotionMetrics:
    return motion_metrics_from_errors(*motion_errors(traj, gt, valid), miss=miss)


def plan_collisions(
    plan_xy: np.ndarray,
    agents_xy: np.ndarray,
    agents_heading: np.ndarray,
    agents_box: np.ndarray,
    ego_box: tuple[float, float] = (4.0, 1.9),
) -> np.ndarray:
    """Per-step flag: the ego box placed on the plan overlaps any agent box at that step.

    The ego heading follows the plan from the origin facing +x.
    """
    steps = len(plan_xy)
    heading = path_headings(np.zeros(2), 0.0, plan_xy)
    hit = np.zeros(steps, dtype=bool)
    for a in range(len(agents_xy)):
        hit |= boxes_overlap(plan_xy, heading, ego_box[0], ego_box[1], agents_xy[a, :steps], agents_heading[a, :steps], agents_box[a, 0], agents_box[a, 1])
    return hit


def plan_metrics(
    plans: np.ndarray,
    gt: np.ndarray,
    collisions: np.ndarray,
    step_seconds: float = 0.5,
    at_step_only: bool = False,
) -> PlanMetrics:
    """L2 at each horizon and collision rates; ``collisions (B, steps)`` from :func:`plan_collisions`.

    Collision at horizon h counts any step up to h unless ``at_step_only``.
    """
    b = len(plans)
    if b == 0:
        return PlanMetrics((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0)
    l2, col = [], []
    for h in HORIZONS:
        k = int(round(h / step_seconds)) - 1
        l2.append(float(np.mean(np.sqrt(((plans[:, k] - gt[:, k]) ** 2).sum(axis=-1)))))
        flags = collisions[:, k] if at_step_only else collisions[:, : k + 1].any(axis=1)
        col.append(float(np.mean(flags)))
    return PlanMetrics(tuple(l2), tuple(col), b)


def constant_velocity(scene: PreparedScene, steps: int, step_seconds: float = 0.5) -> np.ndarray:
    """Single-mode constant-velocity extrapolation ``(A, 1, steps, 2)``."""
    t = (np.arange(steps) + 1.0) * step_seconds
    d = np.stack([np.cos(scene.heading), np.sin(scene.heading)], axis=-1) * scene.speed[:, None]
    return (scene.pos[:, None, :] + t[None, :, None] * d[:, None, :])[:, None]


# --------------------------------------------------------------------- model


@dataclass
class Model:
    isg: IsgConfig
    planner: PlannerConfig
    dims: SceneDims
    anchors: AnchorSet
    params: ParamStore


def build_model(isg: IsgConfig, planner: PlannerConfig, dims: SceneDims, train_samples: Sequence[SceneSample], seed: int) -> Model:
    """Fit anchors on the training split and initialize every parameter from ``seed``."""
    anchors = fit_anchors(local_futures(train_samples), isg.anchor_count, seed)
    params = init_isg_params(isg, dims, seed)
    init_planner_params(planner, isg.width, dims, seed, params)
    return Model(isg, planner, dims, anchors, params)


@dataclass
class Forward:
    batch: SceneBatch
    layers: list[ModalityOutput]
    plan: Var
    tape: Tape


def forward(model: Model, batch: SceneBatch, tape: Tape | None = None) -> Forward:
    tape = Tape() if tape is None else tape
    out = isg_forward(batch, model.isg, model.params, model.anchors, tape, model.dims)
    ego = ego_graph_feature(out, batch) if model.planner.use_graph else None
    status = encode_ego_status(batch.ego_status, model.params, tape) if model.planner.use_ego_status else None
    waypoints = plan(ego, status, batch.command, model.params, model.planner, tape, model.isg.coord_scale)
    return Forward(batch, out.layers, waypoints, tape)


def batch_targets(batch: SceneBatch, plan_steps: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    gt = np.concatenate([s.gt for s in batch.scenes])
    valid = np.concatenate([s.valid for s in batch.scenes])
    ego_gt = np.stack([s.gt[s.ego, :plan_steps] for s in batch.scenes])
    ego_valid = np.stack([s.valid[s.ego, :plan_steps] for s in batch.scenes])
    return gt, valid, ego_gt, ego_valid


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_scenes: int = 1
    lr: float = 1e-3
    lr_schedule: str = "cosine"  # or "constant"
    lr_floor: float = 0.01  # final fraction of lr under the cosine schedule
    plan_weight: float = 1.0
    regression: str = "smooth_l1"
    eval_every: int = 1  # validation metrics every n epochs (0 disables)


def learning_rate(tcfg: TrainConfig, step: int, total: int) -> float:
    if tcfg.lr_schedule == "constant" or total <= 1:
        return tcfg.lr
    if tcfg.lr_schedule != "cosine":
        raise ValueError(f"unknown lr schedule {tcfg.lr_schedule!r}")
    frac = min(step / (total - 1), 1.0)
    return tcfg.lr * (tcfg.lr_floor + (1.0 - tcfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def total_loss(model: Model, fw: Forward, tcfg: TrainConfig) -> tuple[Var, float, float]:
    gt, valid, ego_gt, ego_valid = batch_targets(fw.batch, model.planner.plan_steps)
    lm = motion_loss(fw.layers, gt, valid, tcfg.regression)
    lp = plan_loss(fw.plan, ego_gt, ego_valid)
    return ad.add(lm, ad.mul(lp, tcfg.plan_weight)), float(lm.value), float(lp.value)


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    motion: MotionMetrics
    plan: PlanMetrics  # as configured (post-optimized if enabled)
    plan_raw: PlanMetrics
    plan_post: PlanMetrics
    baseline: MotionMetrics | None = None

    def as_dict(self) -> dict:
        out = {"minADE": self.motion.min_ade, "minFDE": self.motion.min_fde, "MR": self.motion.miss_rate}
        out.update({f"plan_{k}": v for k, v in self.plan.as_dict().items()})
        out.update({f"raw_{k}": v for k, v in self.plan_raw.as_dict().items()})
        out.update({f"post_{k}": v for k, v in self.plan_post.as_dict().items()})
        if self.baseline is not None:
            out.update({"cv_minADE": self.baseline.min_ade, "cv_minFDE": self.baseline.min_fde, "cv_MR": self.baseline.miss_rate})
        return out


def _scene_collisions(scene: PreparedScene, waypoints: np.ndarray, ego_box: tuple[float, float]) -> np.ndarray:
    others = [i for i in range(scene.n_agents) if i != scene.ego]
    steps = len(waypoints)
    return plan_collisions(waypoints, scene.gt[others, :steps], scene.gt_heading[others, :steps], scene.box[others], ego_box)


def evaluate(model: Model, scenes: Sequence[PreparedScene], batch_scenes: int = 8, with_baseline: bool = False) -> EvalReport:
    """Final-layer motion metrics and planning metrics with and without post-optimization."""
    pc = model.planner
    ego_box = (pc.ego_length, pc.ego_width)
    ades, fdes, cv_ades, cv_fdes = [], [], [], []
    raw, post, gts, col_raw, col_post = [], [], [], [], []
    for start in range(0, len(scenes), batch_scenes):
        chunk = list(scenes[start : start + batch_scenes])
        batch = SceneBatch.from_prepared(chunk, model.dims)
        fw = forward(model, batch, Tape(record=False))
        final = fw.layers[-1]
        traj = final.trajectories.value
        scores = final.scores.value
        waypoints = fw.plan.value
        for b, scene in enumerate(chunk):
            a0, a1 = batch.agent_offset[b], batch.agent_offset[b + 1]
            ade, fde = motion_errors(traj[a0:a1], scene.gt, scene.valid)
            ades.append(ade)
            fdes.append(fde)
            if with_baseline:
                ade, fde = motion_errors(constant_velocity(scene, model.dims.future_steps, model.dims.step_seconds), scene.gt, scene.valid)
                cv_ades.append(ade)
                cv_fdes.append(fde)
            wp = waypoints[b]
            others = [i for i in range(scene.n_agents) if i != scene.ego]
            top = traj[a0:a1][others, np.argmax(scores[a0:a1][others], axis=1)] if others else np.zeros((0, model.dims.future_steps, 2))
            grid = build_occupancy(top, scene.box[others], scene.pos[others], scene.heading[others], pc)
            wp_post = post_optimize(wp, grid, pc)
            raw.append(wp)
            post.append(wp_post)
            gts.append(scene.gt[scene.ego, : pc.plan_steps])
            col_raw.append(_scene_collisions(scene, wp, ego_box))
            col_post.append(_scene_collisions(scene, wp_post, ego_box))
    motion = motion_metrics_from_errors(np.concatenate(ades), np.concatenate(fdes))
    gts_a = np.array(gts)
    p_raw = plan_metrics(np.array(raw), gts_a, np.array(col_raw), model.dims.step_seconds)
    p_post = plan_metrics(np.array(post), gts_a, np.array(col_post), model.dims.step_seconds)
    baseline = motion_metrics_from_errors(np.concatenate(cv_ades), np.concatenate(cv_fdes)) if with_baseline else None
    return EvalReport(motion, p_post if pc.post_optimize else p_raw, p_raw, p_post, baseline)


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)


def _finite_record(x: float) -> float | None:
    return x if math.isfinite(x) else None


def train(
    model: Model,
    train_scenes: Sequence[PreparedScene],
    val_scenes: Sequence[PreparedScene],
    tcfg: TrainConfig,
    seed: int,
    log_path: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam on one scene batch at a time with seeded shuffling; logs one record per epoch.

    A non-finite loss restores the parameters of the last finished epoch and
    raises :class:`NumericError`.
    """
    rng = np.random.default_rng(seed)
    history: list[dict] = []
    log = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    last_good = model.params.copy()
    per_epoch = math.ceil(len(train_scenes) / tcfg.batch_scenes)
    total_steps = per_epoch * tcfg.epochs
    global_step = 0
    try:
        for epoch in range(1, tcfg.epochs + 1):
            order = rng.permutation(len(train_scenes))
            sums = np.zeros(3)
            steps = 0
            for start in range(0, len(order), tcfg.batch_scenes):
                chunk = [train_scenes[i] for i in order[start : start + tcfg.batch_scenes]]
                fw = forward(model, SceneBatch.from_prepared(chunk, model.dims))
                loss, lm, lp = total_loss(model, fw, tcfg)
                if not math.isfinite(float(loss.value)):
                    model.params = last_good
                    raise NumericError(f"non-finite loss at epoch {epoch}, step {steps}")
                model.params.zero_grad()
                ad.backward(fw.tape, loss, model.params)
                ad.adam_step(model.params, lr=learning_rate(tcfg, global_step, total_steps))
                fw.tape.release()
                sums += (float(loss.value), lm, lp)
                steps += 1
                global_step += 1
            rec = {
                "version": LOG_VERSION,
                "epoch": epoch,
                "losses": {k: float(v / max(steps, 1)) for k, v in zip(("total", "motion", "plan"), sums)},
            }
            if val_scenes and tcfg.eval_every and epoch % tcfg.eval_every == 0:
                rep = evaluate(model, val_scenes)
                rec["val"] = {k: _finite_record(v) for k, v in rep.as_dict().items()}
            history.append(rec)
            if log is not None:
                log.write(json.dumps(rec, sort_keys=True) + "\n")
                log.flush()
            if on_epoch is not None:
                on_epoch(rec)
            last_good = model.params.copy()
    finally:
        if log is not None:
            log.close()
    return TrainResult(model, history)


def prepare_all(samples: Sequence[SceneSample], dims: SceneDims, coord_scale: float) -> list[PreparedScene]:
    return [prepare_scene(s, dims, coord_scale) for s in samples]


# ------------------------------------------------------------------ ablation


@dataclass(frozen=True)
class AblationCell:
    name: str
    overrides: dict


def summarize(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0, "values": [float(x) for x in v]}


def ablation_table(cells: Sequence[AblationCell], results: dict[str, list[dict]], columns: Sequence[str]) -> dict:
    rows = []
    for cell in cells:
        runs = results[cell.name]
        rows.append(
            {
                "cell": cell.name,
                "overrides": cell.overrides,
                "seeds": [r["seed"] for r in runs],
                "metrics": {c: summarize([r["metrics"][c] for r in runs]) for c in columns},
            }
        )
    return {"version": TABLE_VERSION, "columns": list(columns), "rows": rows}


def format_table(table: dict) -> str:
    """Aligned text rendering with ``mean ± std`` per column."""
    cols = table["columns"]
    header = ["cell"] + cols
    body = [[r["cell"]] + [f"{r['metrics'][c]['mean']:.4f} ± {r['metrics'][c]['std']:.4f}" for c in cols] for r in table["rows"]]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in body)
    return "\n".join(lines) + "\n"


def config_dict(obj) -> dict:
    return asdict(obj)
