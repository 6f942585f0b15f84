"""Per-layer vector plots of a scene graph plus raw numeric and edge dumps.

Every drawn graph edge carries an SVG id ``<kind>-<target>-<source>`` so the
plot can be checked against the edge dump line by line.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon  # noqa: E402

from .autodiff import Tape  # noqa: E402
from .batch import SceneBatch  # noqa: E402
from .geometry import box_corners  # noqa: E402
from .graph import EdgeList, write_edge_dump  # noqa: E402
from .network import ego_graph_feature, isg_forward  # noqa: E402
from .planner import build_occupancy, encode_ego_status, format_plan_dump, plan, post_optimize  # noqa: E402
from .scene import MapKind, SceneSample  # noqa: E402
from .train import Model  # noqa: E402

MAP_STYLE = {
    MapKind.CENTERLINE: dict(color="#9aa5b1", lw=0.6, ls=":"),
    MapKind.DIVIDER: dict(color="#d4a017", lw=0.8),
    MapKind.BOUNDARY: dict(color="#333333", lw=1.0),
    MapKind.CROSSING: dict(color="#b05fc0", lw=1.0),
}
EDGE_ID = re.compile(r'<g id="(dsg|ssg)-(\d+)-(\d+)"')


def _edge_pairs(edges: EdgeList) -> list[tuple[int, int]]:
    return [(t, int(s)) for t in range(edges.neighbors.shape[0]) for s in edges.neighbors[t] if s >= 0]


def svg_edges(svg_text: str) -> dict[str, set[tuple[int, int]]]:
    """(target, source) pairs per graph kind, read back from an exported plot."""
    out: dict[str, set[tuple[int, int]]] = {"dsg": set(), "ssg": set()}
    for kind, t, s in EDGE_ID.findall(svg_text):
        out[kind].add((int(t), int(s)))
    return out


def _round(x):
    return np.round(np.asarray(x, dtype=np.float64), 6).tolist()


def export_scene(model: Model, sample: SceneSample, out_dir: str | Path) -> list[Path]:
    """Write ``layer<l>.svg``, ``layer<l>_edges.txt`` and ``layer<l>.json`` for every refinement layer, plus ``plan.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    batch = SceneBatch.from_samples([sample], model.dims, model.isg.coord_scale)
    tape = Tape(record=False)
    out = isg_forward(batch, model.isg, model.params, model.anchors, tape, model.dims)
    pc = model.planner
    ego_feat = ego_graph_feature(out, batch) if pc.use_graph else None
    status = encode_ego_status(batch.ego_status, model.params, tape) if pc.use_ego_status else None
    waypoints = plan(ego_feat, status, batch.command, model.params, pc, tape, model.isg.coord_scale).value[0]
    scene = batch.scenes[0]
    others = [i for i in range(scene.n_agents) if i != scene.ego]
    final = out.layers[-1]
    traj = final.trajectories.value
    top = traj[others, np.argmax(final.scores.value[others], axis=1)] if others else np.zeros((0, model.dims.future_steps, 2))
    grid = build_occupancy(top, scene.box[others], scene.pos[others], scene.heading[others], pc)
    optimized = post_optimize(waypoints, grid, pc)

    plt.rcParams["svg.hashsalt"] = "isgraph"
    plt.rcParams["svg.fonttype"] = "none"
    written: list[Path] = []
    m = model.isg.modes
    for layer, decoded in enumerate(out.layers):
        props = out.proposals[layer]  # (A, M, T, 2) proposals fed into this layer
        node_pt = props[:, :, -1, :].reshape(-1, 2)
        poly_pt = batch.poly.mean(axis=1) if batch.n_polys else np.zeros((0, 2))
        edges = out.edges[layer]

        fig, ax = plt.subplots(figsize=(8, 8))
        for j, mp in enumerate(sample.map):
            pts = np.asarray(mp.points)
            ax.plot(pts[:, 0], pts[:, 1], gid=f"map-{j}", **MAP_STYLE[mp.kind])
        for kind, color in (("dsg", "#1f77b4"), ("ssg", "#2ca02c")):
            if kind not in edges:
                continue
            src_pt = node_pt if kind == "dsg" else poly_pt
            for t, s in _edge_pairs(edges[kind]):
                ax.plot(
                    [node_pt[t, 0], src_pt[s, 0]],
                    [node_pt[t, 1], src_pt[s, 1]],
                    color=color,
                    lw=0.3,
                    alpha=0.5,
                    gid=f"{kind}-{t}-{s}",
                )
        tr = decoded.trajectories.value
        for a in range(scene.n_agents):
            corners = box_corners(scene.pos[a], scene.heading[a], scene.box[a, 0], scene.box[a, 1])
            ax.add_patch(Polygon(corners, closed=True, fc="#d62728" if a == scene.ego else "#7f7f7f", ec="k", lw=0.5, gid=f"agent-{a}"))
            for k in range(m):
                ax.plot(tr[a, k, :, 0], tr[a, k, :, 1], color="#ff7f0e", lw=0.7, alpha=0.8, gid=f"mode-{a}-{k}")
        ax.plot(waypoints[:, 0], waypoints[:, 1], "-o", color="#d62728", ms=2, lw=1.2, gid="plan")
        ax.plot(optimized[:, 0], optimized[:, 1], "--", color="#8c564b", lw=1.0, gid="plan-optimized")
        ax.set_aspect("equal")
        ax.set_title(f"layer {layer}")
        svg = out_dir / f"layer{layer}.svg"
        fig.savefig(svg, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)

        dump = out_dir / f"layer{layer}_edges.txt"
        write_edge_dump(dump, [(k, edges[k]) for k in ("dsg", "ssg") if k in edges])

        raw = out_dir / f"layer{layer}.json"
        record = {
            "layer": layer,
            "proposals": _round(props),
            "trajectories": _round(tr),
            "scores": _round(decoded.scores.value),
            "plan": _round(waypoints),
            "plan_optimized": _round(optimized),
        }
        raw.write_text(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
        written += [svg, dump, raw]
    plan_dump = out_dir / "plan.txt"
    plan_dump.write_text("\n".join(format_plan_dump(waypoints, optimized, grid)) + "\n", encoding="utf-8")
    return written + [plan_dump]
