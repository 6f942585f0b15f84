"""Command-line entry point: gen, train, eval, ablate, gradcheck, export."""

from __future__ import annotations

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import dataclasses  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import experiment as ex  # noqa: E402
from .config import ConfigError, RunConfig, apply_overrides, load_config  # noqa: E402
from .scene import SceneValidationError, load_dataset, save_dataset  # noqa: E402
from .synth import DIFFICULTIES, gen_dataset, gen_scene, split_dataset  # noqa: E402
from .train import HORIZONS, EvalReport, NumericError, build_model, format_table  # noqa: E402

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _write_json(path: str | Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None


def _samples(args, cfg: RunConfig):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    return ex.cached_dataset(cfg, getattr(args, "cache", None))


# ----------------------------------------------------------------- tables


def motion_table(report: EvalReport) -> str:
    rows = [("ISG", report.motion)]
    if report.baseline is not None:
        rows.append(("Constant Vel.", report.baseline))
    lines = [f"{'Method':<16}{'minADE (m)':>12}{'minFDE (m)':>12}{'MR':>8}"]
    for name, m in rows:
        lines.append(f"{name:<16}{m.min_ade:>12.3f}{m.min_fde:>12.3f}{m.miss_rate:>8.3f}")
    return "\n".join(lines) + "\n"


def plan_table(report: EvalReport) -> str:
    hs = "".join(f"{f'{h}s':>8}" for h in HORIZONS)
    lines = [
        f"{'':<20}{'L2 (m)':^{8 * (len(HORIZONS) + 1)}}{'Col. Rate (%)':^{8 * (len(HORIZONS) + 1)}}",
        f"{'Method':<20}{hs}{'Avg.':>8}{hs}{'Avg.':>8}",
    ]
    for name, p in (("ISG", report.plan_raw), ("ISG + post-opt", report.plan_post)):
        l2 = "".join(f"{v:>8.3f}" for v in p.l2) + f"{p.l2_avg:>8.3f}"
        col = "".join(f"{100 * v:>8.2f}" for v in p.collision) + f"{100 * p.collision_avg:>8.2f}"
        lines.append(f"{name:<20}{l2}{col}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _config(args)
    if args.n is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, n_scenes=args.n))
    if args.difficulty is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, mix={args.difficulty: 1.0}))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, seed=args.seed))
    if not args.out:
        raise UsageError("gen needs --out PATH")
    samples = gen_dataset(cfg.data.n_scenes, cfg.data.seed, dict(cfg.data.mix), cfg.dims, cfg.generator)
    save_dataset(samples, args.out, cfg.dims, generator=cfg.generator.to_dict())
    pairs = np.array([s.meta["conflict_pairs"] for s in samples])
    counts: dict[str, int] = {}
    for s in samples:
        counts[s.meta["difficulty"]] = counts.get(s.meta["difficulty"], 0) + 1
    agents = np.array([len(s.agents) for s in samples])
    print(f"wrote {len(samples)} scenes to {args.out}")
    for d in DIFFICULTIES:
        if d in counts:
            print(f"  {d:<12}{counts[d]:>6}")
    print(f"agents per scene: mean {agents.mean():.2f} min {agents.min()} max {agents.max()}")
    print(
        f"conflict pairs per scene: mean {pairs.mean():.2f} min {pairs.min()} max {pairs.max()}"
        f" scenes with a conflict {np.mean(pairs > 0):.3f}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    train_s, val_s = split_dataset(_samples(args, cfg))
    _write_json(out / "config.json", cfg.to_dict())
    t0 = time.time()
    res = ex.run_single(cfg, train_s, val_s, log_path=out / "train_log.jsonl", checkpoint=out / "model.npz")
    _write_json(out / "metrics.json", res["metrics"])
    last = res["losses"][-1] if res["losses"] else {}
    print(f"trained {cfg.train.epochs} epochs on {len(train_s)} scenes in {time.time() - t0:.0f}s; final loss {last.get('total', float('nan')):.4f}")
    print(f"minADE {res['metrics']['minADE']:.3f}  constant velocity {res['metrics']['cv_minADE']:.3f}")
    print(f"checkpoint {out / 'model.npz'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.checkpoint:
        model, cfg = ex.load_model(args.checkpoint)
        if args.set:
            cfg = apply_overrides(cfg, args.set)
            model = dataclasses.replace(model, planner=cfg.planner)
        samples = load_dataset(args.data) if args.data else ex.cached_dataset(cfg, args.cache)
        _, val = split_dataset(samples)
    else:
        cfg = _config(args)
        train_s, val = split_dataset(_samples(args, cfg))
        model = build_model(cfg.isg, cfg.planner, cfg.dims, train_s or val, cfg.seed)
    if args.split == "all":
        val = load_dataset(args.data) if args.data else ex.cached_dataset(cfg, args.cache)
    report = ex.evaluate_model(model, val)
    print(f"motion prediction ({report.motion.agents} agents, {len(val)} scenes)")
    print(motion_table(report))
    print("planning")
    print(plan_table(report))
    if args.out:
        _write_json(args.out, report.as_dict())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    cells = []
    for name in args.grid.split(","):
        if name not in ex.GRIDS:
            raise UsageError(f"unknown grid {name!r} (expected one of {', '.join(ex.GRIDS)})")
        cells.extend(ex.GRIDS[name])
    seeds = _seeds(args.seeds)
    table = ex.run_ablation(cfg, cells, seeds, cache_dir=args.cache, workers=args.workers)
    print(format_table(table))
    if args.out:
        _write_json(args.out, table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    seeds = _seeds(args.seeds) if args.seeds else [cfg.seed]
    worst = 0.0
    report_out = []
    for seed in seeds:
        t0 = time.time()
        report, groups = ex.model_gradcheck(cfg, seed, max_entries=args.entries)
        worst = max(worst, float(report.max_rel_error))
        print(f"seed {seed}: max relative error {report.max_rel_error:.3e} ({report.n_checked} entries, {time.time() - t0:.1f}s)")
        for g in ex.SUBNETWORKS:
            if g in groups:
                print(f"  {g:<22}{groups[g]:.3e}")
        print(f"  worst parameter {report.worst_param}{list(report.worst_index)}")
        report_out.append(
            {
                "seed": seed,
                "max_rel_error": float(report.max_rel_error),
                "worst_param": report.worst_param,
                "groups": {g: float(v) for g, v in groups.items()},
            }
        )
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {args.tol:g})")
    if args.out:
        _write_json(args.out, {"passed": ok, "tolerance": args.tol, "runs": report_out})
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_export(args) -> int:
    from .export import export_scene

    if args.checkpoint:
        model, cfg = ex.load_model(args.checkpoint)
    else:
        cfg = _config(args)
        model = None
    if args.data:
        samples = load_dataset(args.data)
        if not 0 <= args.index < len(samples):
            raise UsageError(f"--index {args.index} out of range for {len(samples)} scenes")
        sample = samples[args.index]
    else:
        sample = gen_scene(args.scene_seed, args.difficulty, cfg.dims, cfg.generator)
    if model is None:
        model = build_model(cfg.isg, cfg.planner, cfg.dims, [sample, sample], cfg.seed)
    files = export_scene(model, sample, args.out or "export")
    for f in files:
        print(f)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isgraph", description="Interaction scene graph prediction and planning.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--set", action="append", metavar="K=V", help="override a config entry, e.g. isg.width=64")
        p.add_argument("--out", help=out_help)

    def data_args(p):
        p.add_argument("--data", help="dataset file (default: generate from the config into the cache)")
        p.add_argument("--cache", help="cache directory for generated datasets and runs")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p, "output dataset path")
    p.add_argument("--n", type=int, help="number of scenes")
    p.add_argument("--difficulty", choices=DIFFICULTIES, help="generate a single difficulty")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train and evaluate one model")
    common(p, "output directory")
    data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or an untrained model)")
    common(p, "metrics report path (JSON)")
    data_args(p)
    p.add_argument("--checkpoint", help="model checkpoint from train")
    p.add_argument("--split", choices=("val", "all"), default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train a grid of variants over several seeds")
    common(p, "table path (JSON)")
    p.add_argument("--cache", help="cache directory for generated datasets and runs")
    p.add_argument("--grid", required=True, help=f"comma-separated grids: {', '.join(ex.GRIDS)}")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every subnetwork")
    common(p, "report path (JSON)")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--entries", type=int, default=4, help="entries checked per parameter")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export", help="per-layer plots and numeric dumps for one scene")
    common(p, "output directory")
    p.add_argument("--checkpoint", help="model checkpoint (default: untrained model from the config)")
    p.add_argument("--data", help="dataset file to take the scene from")
    p.add_argument("--index", type=int, default=0, help="scene index in --data")
    p.add_argument("--scene-seed", type=int, default=0, help="generate the scene from this seed when --data is absent")
    p.add_argument("--difficulty", choices=DIFFICULTIES, default="interactive")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SceneValidationError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
