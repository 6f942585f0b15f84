"""Run orchestration: cached datasets, single train+eval runs, ablation grids, gradient checks."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, ParamStore
from .batch import SceneBatch
from .config import RunConfig, from_dict, with_overrides
from .network import AnchorSet, isg_forward
from .scene import SceneSample, load_dataset, save_dataset
from .synth import gen_dataset, gen_scene, split_dataset
from .train import (
    AblationCell,
    EvalReport,
    Forward,
    Model,
    TrainConfig,
    ablation_table,
    build_model,
    ego_graph_feature,
    encode_ego_status,
    evaluate,
    plan,
    prepare_all,
    total_loss,
    train,
)

DEFAULT_CACHE = Path(os.environ.get("ISGRAPH_CACHE", Path.home() / ".cache" / "isgraph"))


def data_key(cfg: RunConfig) -> str:
    blob = json.dumps(
        {"data": dataclasses.asdict(cfg.data), "generator": cfg.generator.to_dict(), "dims": dataclasses.asdict(cfg.dims)},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def generate(cfg: RunConfig) -> list[SceneSample]:
    return gen_dataset(cfg.data.n_scenes, cfg.data.seed, dict(cfg.data.mix), cfg.dims, cfg.generator)


def cached_dataset(cfg: RunConfig, cache_dir: Path | None = None) -> list[SceneSample]:
    """Dataset for ``cfg``, generated once and stored under the cache directory."""
    cache_dir = Path(cache_dir or DEFAULT_CACHE)
    path = cache_dir / f"scenes-{data_key(cfg)}.jsonl"
    if path.exists():
        return load_dataset(path)
    samples = generate(cfg)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    save_dataset(samples, tmp, cfg.dims, generator=cfg.generator.to_dict())
    tmp.replace(path)
    return samples


def run_single(
    cfg: RunConfig,
    train_samples: Sequence[SceneSample],
    val_samples: Sequence[SceneSample],
    log_path: str | Path | None = None,
    checkpoint: str | Path | None = None,
    with_baseline: bool = True,
) -> dict:
    """Train from ``cfg.seed`` and evaluate on the validation split."""
    model = build_model(cfg.isg, cfg.planner, cfg.dims, train_samples, cfg.seed)
    tr = prepare_all(train_samples, cfg.dims, cfg.isg.coord_scale)
    va = prepare_all(val_samples, cfg.dims, cfg.isg.coord_scale)
    tcfg = dataclasses.replace(cfg.train, eval_every=0) if log_path is None else cfg.train
    t0 = time.perf_counter()
    result = train(model, tr, va, tcfg, cfg.seed, log_path=log_path)
    report = evaluate(model, va, with_baseline=with_baseline)
    seconds = time.perf_counter() - t0
    if checkpoint is not None:
        save_model(model, checkpoint, cfg)
    return {"seed": cfg.seed, "metrics": report.as_dict(), "losses": [h["losses"] for h in result.history], "seconds": seconds}


def save_model(model: Model, path: str | Path, cfg: RunConfig) -> None:
    ad.save_checkpoint(model.params, path, meta={"config": cfg.to_dict()}, extra={"anchors": model.anchors.trajectories})


def load_model(path: str | Path) -> tuple[Model, RunConfig]:
    store, meta, extra = ad.load_checkpoint(path)
    cfg = from_dict(meta["config"])
    return Model(cfg.isg, cfg.planner, cfg.dims, AnchorSet(extra["anchors"]), store), cfg


def evaluate_model(model: Model, samples: Sequence[SceneSample], with_baseline: bool = True) -> EvalReport:
    return evaluate(model, prepare_all(samples, model.dims, model.isg.coord_scale), with_baseline=with_baseline)


# ------------------------------------------------------------------ ablation


GRIDS: dict[str, tuple[AblationCell, ...]] = {
    "distance": (
        AblationCell("trajectory", {}),
        AblationCell("current", {"isg.distance": "current"}),
        AblationCell("feature", {"isg.distance": "feature"}),
    ),
    "graph": (
        AblationCell("dsg+ssg", {}),
        AblationCell("dsg_only", {"isg.use_ssg": False}),
        AblationCell("ssg_only", {"isg.use_dsg": False}),
    ),
    "aggregation": (
        AblationCell("mlp_max", {}),
        AblationCell("mlp_avg", {"isg.aggregation": "mlp_avg"}),
        AblationCell("attention", {"isg.aggregation": "attention"}),
    ),
    "planner": tuple(
        AblationCell(
            name + ("+post" if post else ""),
            {"planner.use_graph": g, "planner.use_ego_status": e, "planner.post_optimize": post},
        )
        for post in (False, True)
        for name, g, e in (("G", True, False), ("E", False, True), ("G+E", True, True))
    ),
}
MOTION_COLUMNS = ("minADE", "minFDE", "MR")
PLAN_COLUMNS = ("plan_l2_avg", "plan_col_avg", "raw_col_avg", "post_col_avg")


def _train_config(cfg: RunConfig) -> RunConfig:
    """Post-optimization only acts at inference, so runs differing in it share one training."""
    return dataclasses.replace(cfg, planner=dataclasses.replace(cfg.planner, post_optimize=True))


def _run_key(cfg: RunConfig) -> str:
    return _train_config(cfg).digest()


def _select_plan(res: dict, post: bool) -> dict:
    """Point the ``plan_*`` metrics at the raw or post-optimized plans."""
    src = "post_" if post else "raw_"
    metrics = dict(res["metrics"])
    for k in list(metrics):
        if k.startswith(src):
            metrics["plan_" + k[len(src):]] = metrics[k]
    return {**res, "metrics": metrics}


def _cell_job(args) -> dict:
    cfg_dict, cache_dir = args
    cfg = from_dict(cfg_dict)
    samples = cached_dataset(cfg, cache_dir)
    train_s, val_s = split_dataset(samples)
    return run_single(cfg, train_s, val_s)


def run_cached(cfg: RunConfig, cache_dir: Path | None = None) -> dict:
    """:func:`run_single` on the cached dataset, memoized on disk by the full config digest."""
    cache_dir = Path(cache_dir or DEFAULT_CACHE)
    path = cache_dir / "runs" / f"run-{_run_key(cfg)}.json"
    if path.exists():
        res = json.loads(path.read_text(encoding="utf-8"))
    else:
        res = _cell_job((_train_config(cfg).to_dict(), cache_dir))
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(res, sort_keys=True), encoding="utf-8")
        tmp.replace(path)
    return _select_plan(res, cfg.planner.post_optimize)


def run_ablation(
    base: RunConfig,
    cells: Sequence[AblationCell],
    seeds: Sequence[int],
    columns: Sequence[str] = MOTION_COLUMNS + PLAN_COLUMNS,
    cache_dir: Path | None = None,
    workers: int = 1,
) -> dict:
    """Train every (cell, seed) pair on the same dataset and tabulate mean and std per cell."""
    jobs = [(cell, with_overrides(dataclasses.replace(base, seed=s), cell.overrides)) for cell in cells for s in seeds]
    cached_dataset(base, cache_dir)  # generate once before any worker starts
    unique = list({_run_key(c): c for _, c in jobs}.values())
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_cached, unique, [cache_dir] * len(unique)))
    outs = [run_cached(c, cache_dir) for _, c in jobs]
    results: dict[str, list[dict]] = {cell.name: [] for cell in cells}
    for (cell, _), out in zip(jobs, outs):
        results[cell.name].append(out)
    return ablation_table(cells, results, columns)


# ------------------------------------------------------------- gradient check


def small_scene(seed: int, max_agents: int = 3, max_polylines: int = 2) -> SceneSample:
    """A generated scene trimmed to the ego, its nearest agents and nearest map elements."""
    s = gen_scene(seed, "interactive")
    cur = np.array([a.current.position for a in s.agents])
    keep = sorted(np.argsort(np.hypot(*cur.T), kind="stable")[:max_agents].tolist())
    polys = sorted(s.map, key=lambda m: min(np.hypot(x, y) for x, y in m.points))[:max_polylines]
    return dataclasses.replace(
        s,
        agents=tuple(s.agents[i] for i in keep),
        map=tuple(polys),
        gt_futures=tuple(s.gt_futures[i] for i in keep),
        gt_future_valid=tuple(s.gt_future_valid[i] for i in keep),
    )


SUBNETWORKS = {
    "history encoder": ("hist.",),
    "proposal encoder": ("prop.",),
    "map encoder": ("poly.",),
    "intention embedding": ("intent",),
    "node composer": ("compose.",),
    "dsg aggregation": ("dsg.",),
    "ssg aggregation": ("ssg.",),
    "decoders": ("decode.",),
    "planner head": ("status.", "command", "plan."),
}


def subnetwork_of(name: str) -> str:
    for group, prefixes in SUBNETWORKS.items():
        if any(name.startswith(p) for p in prefixes):
            return group
    return "other"


def model_gradcheck(cfg: RunConfig, seed: int, max_entries: int = 4) -> tuple[GradCheckReport, dict[str, float]]:
    """Central-difference check of the full training loss with graph edges frozen at their first selection."""
    sample = small_scene(seed)
    model = build_model(cfg.isg, cfg.planner, cfg.dims, [sample] * 2, seed)
    batch = SceneBatch.from_samples([sample], cfg.dims, cfg.isg.coord_scale)
    frozen: dict[tuple[int, str], object] = {}

    def hook(layer, kind, edges):
        return frozen.setdefault((layer, kind), edges)

    tcfg = TrainConfig()

    def closure(store: ParamStore):
        tape = ad.Tape()
        m = dataclasses.replace(model, params=store)
        out = isg_forward(batch, m.isg, store, m.anchors, tape, m.dims, edge_hook=hook)
        ego = ego_graph_feature(out, batch) if m.planner.use_graph else None
        status = encode_ego_status(batch.ego_status, store, tape) if m.planner.use_ego_status else None
        wp = plan(ego, status, batch.command, store, m.planner, tape, m.isg.coord_scale)
        loss, _, _ = total_loss(m, Forward(batch, out.layers, wp, tape), tcfg)
        return tape, loss

    report = ad.grad_check(closure, model.params, seed=seed, max_entries=max_entries)
    groups: dict[str, float] = {}
    for name, err in report.per_param.items():
        g = subnetwork_of(name)
        groups[g] = max(groups.get(g, 0.0), err)
    return report, groups
