"""Interaction scene graph: iterative k-NN message passing over trajectory proposals.

Each agent contributes one dynamic node per modality.  Every layer
composes node features, connects nodes to their nearest neighbors by
proposal geometry (agents to agents, agents to map polylines), aggregates
neighbor messages, and decodes refined multi-modal trajectories that become
the next layer's proposals.  Map polyline features are encoded once and
stay fixed across layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import MlpSpec, ParamStore, Tape, Var
from .batch import SceneBatch, history_feature_dim, polyline_feature_dim
from .geometry import to_local, to_world
from .graph import (
    DISTANCE_KINDS,
    EdgeList,
    build_dsg_edges,
    build_ssg_edges,
    dense_edges,
    dsg_eligibility,
)
from .scene import SceneDims, SceneSample

AGGREGATIONS = ("mlp_max", "mlp_avg", "attention")
INTERACTIONS = ("graph", "attention")


@dataclass(frozen=True)
class IsgConfig:
    layers: int = 3
    modes: int = 6
    k_dsg: int = 24
    k_ssg: int = 8
    width: int = 128
    anchor_count: int = 6
    use_dsg: bool = True
    use_ssg: bool = True
    aggregation: str = "mlp_max"
    distance: str = "trajectory"
    interaction: str = "graph"
    exclude_same_agent: bool = True
    rebuild_ssg: bool = True
    coord_scale: float = 10.0
    decode_init_scale: float = 0.1

    def __post_init__(self):
        for name in ("layers", "modes", "k_dsg", "k_ssg", "width", "anchor_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.modes != self.anchor_count:
            raise ValueError("modes must equal anchor_count")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.distance not in DISTANCE_KINDS:
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.interaction not in INTERACTIONS:
            raise ValueError(f"unknown interaction {self.interaction!r}")

    @property
    def effective_aggregation(self) -> str:
        return "attention" if self.interaction == "attention" else self.aggregation


# ------------------------------------------------------------------ anchors


@dataclass(frozen=True)
class AnchorSet:
    trajectories: np.ndarray  # (M, M_d, 2), agent-local frame
    inertia: float = 0.0


def local_futures(samples: Sequence[SceneSample]) -> np.ndarray:
    """Fully valid ground-truth futures of every agent, in that agent's own frame."""
    out = []
    for s in samples:
        fut = s.futures_array()
        valid = s.valid_array()
        for i, track in enumerate(s.agents):
            if valid[i].all():
                cur = track.current
                out.append(to_local(fut[i], np.asarray(cur.position), cur.heading))
    if not out:
        return np.zeros((0, 0, 2))
    return np.stack(out)


def fit_anchors(futures: np.ndarray, m: int, seed: int = 0, iters: int = 50) -> AnchorSet:
    """Lloyd's k-means with k-means++ seeding over flattened local futures ``(n, M_d, 2)``.

    Empty clusters are re-seeded to the point farthest from its assigned
    center.  Assignment ties go to the lower center index.
    """
    futures = np.asarray(futures, dtype=np.float64)
    n = len(futures)
    if n < m:
        raise ValueError(f"need at least {m} futures to fit {m} anchors, got {n}")
    x = futures.reshape(n, -1)
    rng = np.random.default_rng(seed)

    centers = np.empty((m, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, m):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers[c] = x[idx]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))

    assign = None
    for _ in range(iters):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dist, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(m):
            members = assign == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                own = dist[np.arange(n), assign]
                far = int(np.argmax(own))
                centers[c] = x[far]
                assign[far] = c
    dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    inertia = float(dist.min(axis=1).sum())
    return AnchorSet(centers.reshape(m, *futures.shape[1:]), inertia)


# -------------------------------------------------------------- parameters


def _specs(config: IsgConfig, dims: SceneDims) -> dict[str, MlpSpec]:
    c, t2 = config.width, 2 * dims.future_steps
    return {
        "hist": MlpSpec((history_feature_dim(dims), c, c)),
        "prop": MlpSpec((t2, c, c)),
        "poly": MlpSpec((polyline_feature_dim(dims), c, c)),
        "compose": MlpSpec((4 * c, c, c)),
        "dsg": MlpSpec((2 * c + t2, c, c)),
        "ssg": MlpSpec((2 * c + 2 * dims.polyline_points, c, c)),
    }


def init_isg_params(config: IsgConfig, dims: SceneDims, seed: int = 0, store: ParamStore | None = None) -> ParamStore:
    store = ParamStore() if store is None else store
    rng = np.random.default_rng(seed)
    specs = _specs(config, dims)
    c = config.width
    ad.init_mlp(store, "hist", specs["hist"], rng)
    ad.init_mlp(store, "prop", specs["prop"], rng)
    ad.init_mlp(store, "poly", specs["poly"], rng)
    store.add("intent", rng.normal(0.0, 1.0, size=(config.modes, c)))
    agg = config.effective_aggregation
    for l in range(config.layers):
        ad.init_mlp(store, f"compose.{l}", specs["compose"], rng)
        for kind in ("dsg", "ssg"):
            geom = specs[kind].widths[0] - 2 * c
            if agg == "attention":
                _init_attention(store, f"{kind}.{l}", c, geom, rng)
            else:
                ad.init_mlp(store, f"{kind}.{l}", specs[kind], rng)
        store.add(f"decode.{l}.hidden.weight", rng.normal(0.0, np.sqrt(2.0 / c), size=(c, c)))
        store.add(f"decode.{l}.hidden.bias", np.zeros((1, c)))
        store.add(f"decode.{l}.traj.weight", rng.normal(0.0, config.decode_init_scale / np.sqrt(c), size=(c, 2 * dims.future_steps)))
        store.add(f"decode.{l}.traj.bias", np.zeros((1, 2 * dims.future_steps)))
        store.add(f"decode.{l}.score.weight", rng.normal(0.0, config.decode_init_scale / np.sqrt(c), size=(c, 1)))
        store.add(f"decode.{l}.score.bias", np.zeros((1, 1)))
    return store


def _init_attention(store: ParamStore, prefix: str, c: int, geom: int, rng: np.random.Generator) -> None:
    store.add(f"{prefix}.q.weight", rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, c)))
    store.add(f"{prefix}.q.bias", np.zeros((1, c)))
    for name in ("k", "v"):
        store.add(f"{prefix}.{name}.weight", rng.normal(0.0, 1.0 / np.sqrt(c + geom), size=(c + geom, c)))
        store.add(f"{prefix}.{name}.bias", np.zeros((1, c)))


# ------------------------------------------------------------ building blocks


@dataclass
class ModalityOutput:
    trajectories: Var  # (A, M, M_d, 2), scene frame
    logits: Var  # (A, M)
    scores: Var  # (A, M), softmax over modes


@dataclass
class NodeLayout:
    n_agents: int
    modes: int
    node_agent: np.ndarray  # (N,)
    node_mode: np.ndarray  # (N,)
    pos: np.ndarray  # (N, 2) agent position per node
    cos: np.ndarray  # (N,) agent heading
    sin: np.ndarray

    @classmethod
    def build(cls, batch: SceneBatch, modes: int) -> "NodeLayout":
        a = batch.n_agents
        node_agent = np.repeat(np.arange(a), modes)
        h = batch.heading[node_agent]
        return cls(a, modes, node_agent, np.tile(np.arange(modes), a), batch.pos[node_agent], np.cos(h), np.sin(h))

    @property
    def n_nodes(self) -> int:
        return self.n_agents * self.modes


def _to_node_frame(x: Var, pos: np.ndarray, cos: np.ndarray, sin: np.ndarray, scale: float) -> Var:
    """Points ``x (N, ..., 2)`` (scene frame) into the frame of each row's agent, divided by ``scale``."""
    shape = (len(pos),) + (1,) * (x.value.ndim - 2) + (2,)
    rel = ad.sub(x, pos.reshape(shape))
    bshape = shape[:-1]
    return ad.mul(ad.rotate(rel, cos.reshape(bshape), -sin.reshape(bshape)), 1.0 / scale)


def compose_node_features(
    prev: Var,
    hist_enc: Var,
    props: Var,
    layout: NodeLayout,
    config: IsgConfig,
    params: ParamStore,
    layer: int,
    tape: Tape,
    dims: SceneDims,
) -> Var:
    """Fuse previous feature, history encoding, proposal embedding and intention embedding per node."""
    specs = _specs(config, dims)
    n = layout.n_nodes
    if prev.shape != (n, config.width) or props.shape[0] != n:
        raise ad.ShapeError(f"compose: expected {n} nodes, got prev {prev.shape} and proposals {props.shape}")
    local = _to_node_frame(props, layout.pos, layout.cos, layout.sin, config.coord_scale)
    prop_emb = ad.mlp_forward(specs["prop"], params, "prop", ad.reshape(local, (n, -1)), tape)
    hist_n = ad.gather(hist_enc, layout.node_agent)
    intent = ad.gather(tape.param(params, "intent"), layout.node_mode)
    x = ad.concat([prev, hist_n, prop_emb, intent], axis=1)
    return ad.mlp_forward(specs["compose"], params, f"compose.{layer}", x, tape)


def canonical_neighbors(edges: EdgeList) -> EdgeList:
    """Sort each neighbor row by source index so pooling order is fixed."""
    nb = edges.neighbors
    big = np.iinfo(np.int64).max
    key = np.where(nb >= 0, nb, big)
    order = np.argsort(key, axis=1, kind="stable")
    nb = np.take_along_axis(nb, order, axis=1)
    return EdgeList(nb, np.take_along_axis(edges.distances, order, axis=1))


def aggregate(
    target: Var,
    source: Var,
    edges: EdgeList,
    geometry: Callable[[np.ndarray], Var | np.ndarray],
    mode: str,
    params: ParamStore,
    prefix: str,
    tape: Tape,
) -> Var:
    """Residual neighbor aggregation.

    Each message is a perceptron over ``[target; neighbor; relative geometry]``;
    messages are pooled by max (``mlp_max``), mean (``mlp_avg``) or single-head
    scaled dot-product attention (``attention``).  ``geometry`` maps the
    ``(N, K)`` source index array to per-edge geometry rows ``(N*K, G)``.
    Targets without neighbors come back unchanged.
    """
    if mode not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    edges = canonical_neighbors(edges)
    nb = edges.neighbors
    mask = nb >= 0
    n, k = nb.shape
    if n == 0 or not mask.any():
        return target
    c = target.shape[1]
    src = np.where(mask, nb, 0)
    geom = geometry(src)

    if mode == "attention":
        q = ad.affine(target, tape.param(params, f"{prefix}.q.weight"), tape.param(params, f"{prefix}.q.bias"))
        kk = _edge_projection(source, geom, src, params, f"{prefix}.k", c, tape)
        vv = _edge_projection(source, geom, src, params, f"{prefix}.v", c, tape)
        logits = ad.mul(ad.sum_(ad.mul(ad.reshape(q, (n, 1, c)), kk), axis=2), 1.0 / np.sqrt(c))
        att = ad.softmax(logits, axis=1, mask=mask)
        pooled = ad.sum_(ad.mul(ad.reshape(att, (n, k, 1)), vv), axis=1)
        return ad.add(target, pooled)

    w0 = tape.param(params, f"{prefix}.0.weight")
    b0 = tape.param(params, f"{prefix}.0.bias")
    at = ad.matmul(target, ad.slice_rows(w0, 0, c))
    as_ = ad.matmul(source, ad.slice_rows(w0, c, 2 * c))
    pre = ad.add(ad.reshape(at, (n, 1, c)), ad.gather(as_, src))
    g = ad.matmul(geom, ad.slice_rows(w0, 2 * c, w0.shape[0])) if isinstance(geom, Var) else ad.matmul(tape.const(geom), ad.slice_rows(w0, 2 * c, w0.shape[0]))
    pre = ad.add(ad.add(pre, ad.reshape(g, (n, k, c))), b0)
    h = ad.reshape(ad.relu(pre), (n * k, c))
    msg = ad.affine(h, tape.param(params, f"{prefix}.1.weight"), tape.param(params, f"{prefix}.1.bias"))
    msg = ad.reshape(msg, (n, k, -1))
    if mode == "mlp_max":
        pooled, _ = ad.maxpool_set(msg, mask)
    else:
        pooled = ad.meanpool_set(msg, mask)
    return ad.add(target, pooled)


def _edge_projection(source: Var, geom, src: np.ndarray, params: ParamStore, prefix: str, c: int, tape: Tape) -> Var:
    n, k = src.shape
    w = tape.param(params, f"{prefix}.weight")
    b = tape.param(params, f"{prefix}.bias")
    ps = ad.gather(ad.matmul(source, ad.slice_rows(w, 0, c)), src)
    geom = geom if isinstance(geom, Var) else tape.const(geom)
    pg = ad.reshape(ad.matmul(geom, ad.slice_rows(w, c, w.shape[0])), (n, k, c))
    return ad.add(ad.add(ps, pg), b)


def decode_trajectories(features: Var, props: Var, layout: NodeLayout, config: IsgConfig, params: ParamStore, layer: int, tape: Tape) -> ModalityOutput:
    """Residual offsets (agent frame) on top of the proposals plus one score logit per node."""
    n = layout.n_nodes
    t = props.shape[1]
    p = f"decode.{layer}"
    h = ad.relu(ad.affine(features, tape.param(params, f"{p}.hidden.weight"), tape.param(params, f"{p}.hidden.bias")))
    off = ad.affine(h, tape.param(params, f"{p}.traj.weight"), tape.param(params, f"{p}.traj.bias"))
    off = ad.mul(ad.reshape(off, (n, t, 2)), config.coord_scale)
    off = ad.rotate(off, layout.cos[:, None], layout.sin[:, None])
    traj = ad.add(props, off)
    logit = ad.affine(h, tape.param(params, f"{p}.score.weight"), tape.param(params, f"{p}.score.bias"))
    logits = ad.reshape(logit, (layout.n_agents, layout.modes))
    return ModalityOutput(ad.reshape(traj, (layout.n_agents, layout.modes, t, 2)), logits, ad.softmax(logits, axis=1))


# -------------------------------------------------------------- forward pass


EdgeHook = Callable[[int, str, EdgeList], EdgeList]


@dataclass
class IsgOutput:
    layers: list[ModalityOutput]
    node_features: Var  # final-layer dynamic node features (N, C)
    static_features: list[np.ndarray]  # value of the map features as seen by each layer
    edges: list[dict[str, EdgeList]]  # per layer: "dsg"/"ssg" edge lists actually used
    proposals: list[np.ndarray]  # per layer input proposals (A, M, M_d, 2)
    layout: NodeLayout = field(repr=False)


def initial_proposals(batch: SceneBatch, anchors: AnchorSet) -> np.ndarray:
    """Anchors placed in every agent's frame, in scene coordinates ``(A, M, M_d, 2)``."""
    traj = anchors.trajectories[None, :, :, :]
    return to_world(traj, batch.pos[:, None, None, :], batch.heading[:, None, None])


def _scene_node_ranges(batch: SceneBatch, modes: int):
    for b in range(batch.n_scenes):
        a0, a1 = int(batch.agent_offset[b]), int(batch.agent_offset[b + 1])
        p0, p1 = int(batch.poly_offset[b]), int(batch.poly_offset[b + 1])
        yield a0 * modes, a1 * modes, p0, p1


def _concat_edges(parts: list[EdgeList], k: int) -> EdgeList:
    width = max([p.k for p in parts] + [k])
    padded = []
    for p in parts:
        if p.k < width:
            extra = width - p.k
            n = p.neighbors.shape[0]
            p = EdgeList(
                np.concatenate([p.neighbors, np.full((n, extra), -1, dtype=np.int64)], axis=1),
                np.concatenate([p.distances, np.full((n, extra), np.inf)], axis=1),
            )
        padded.append(p)
    return EdgeList.concat(padded, width)


def build_layer_edges(
    kind: str,
    batch: SceneBatch,
    layout: NodeLayout,
    props: np.ndarray,
    features: np.ndarray,
    static_features: np.ndarray | None,
    config: IsgConfig,
) -> EdgeList:
    """DSG (``kind='dsg'``) or SSG edges for every scene of the batch, in batch-global indices."""
    m = config.modes
    t = props.shape[-2]
    flat = props.reshape(-1, t, 2)
    parts = []
    for n0, n1, p0, p1 in _scene_node_ranges(batch, m):
        agent = layout.node_agent[n0:n1]
        if kind == "dsg":
            if config.interaction == "attention":
                e = dense_edges(dsg_eligibility(agent, config.exclude_same_agent))
            else:
                e = build_dsg_edges(
                    flat[n0:n1], agent, config.k_dsg, config.distance,
                    current=layout.pos[n0:n1], features=features[n0:n1],
                    exclude_same_agent=config.exclude_same_agent,
                )
            parts.append(e.offset(n0, n0))
        else:
            if p1 == p0:
                parts.append(EdgeList.empty(n1 - n0, config.k_ssg))
                continue
            if config.interaction == "attention":
                e = dense_edges(np.ones((n1 - n0, p1 - p0), dtype=bool))
            else:
                e = build_ssg_edges(
                    flat[n0:n1], batch.poly[p0:p1], config.k_ssg, config.distance,
                    current=layout.pos[n0:n1], features=features[n0:n1],
                    static_features=None if static_features is None else static_features[p0:p1],
                )
            parts.append(e.offset(n0, p0))
    return _concat_edges(parts, config.k_dsg if kind == "dsg" else config.k_ssg)


def isg_forward(
    batch: SceneBatch | SceneSample,
    config: IsgConfig,
    params: ParamStore,
    anchors: AnchorSet,
    tape: Tape,
    dims: SceneDims = SceneDims(),
    edge_hook: EdgeHook | None = None,
) -> IsgOutput:
    """Run all refinement layers; returns one :class:`ModalityOutput` per layer."""
    if isinstance(batch, SceneSample):
        batch = SceneBatch.from_samples([batch], dims, config.coord_scale)
    if batch.n_agents == 0:
        raise ValueError("scene has no agents")
    specs = _specs(config, dims)
    layout = NodeLayout.build(batch, config.modes)
    n, c, t = layout.n_nodes, config.width, dims.future_steps
    mode = config.effective_aggregation

    hist_enc = ad.mlp_forward(specs["hist"], params, "hist", tape.const(batch.hist_feat), tape)
    static = None
    if batch.n_polys and config.use_ssg:
        static = ad.mlp_forward(specs["poly"], params, "poly", tape.const(batch.poly_feat), tape)

    props = tape.const(initial_proposals(batch, anchors).reshape(n, t, 2))
    feats = tape.const(np.zeros((n, c)))
    layers, statics, edge_log, prop_log = [], [], [], []
    ssg_edges_first = None
    for l in range(config.layers):
        prop_log.append(props.value.reshape(layout.n_agents, config.modes, t, 2).copy())
        f = compose_node_features(feats, hist_enc, props, layout, config, params, l, tape, dims)
        used = {}
        if config.use_dsg:
            e = build_layer_edges("dsg", batch, layout, props.value, f.value, None, config)
            if edge_hook is not None:
                e = edge_hook(l, "dsg", e)
            used["dsg"] = e

            def dsg_geom(src, props=props):
                nb_props = ad.gather(props, src)  # (N, K, T, 2)
                rel = _to_node_frame(nb_props, layout.pos, layout.cos, layout.sin, config.coord_scale)
                return ad.reshape(rel, (src.size, 2 * t))

            f = aggregate(f, f, e, dsg_geom, mode, params, f"dsg.{l}", tape)
        if static is not None:
            statics.append(static.value)
            if config.rebuild_ssg or ssg_edges_first is None:
                e = build_layer_edges("ssg", batch, layout, props.value, f.value, static.value, config)
                if ssg_edges_first is None:
                    ssg_edges_first = e
            else:
                e = ssg_edges_first
            if edge_hook is not None:
                e = edge_hook(l, "ssg", e)
            used["ssg"] = e

            def ssg_geom(src):
                pts = batch.poly[src]  # (N, K, P, 2)
                rel = to_local(pts, layout.pos[:, None, None, :], np.arctan2(layout.sin, layout.cos)[:, None, None])
                return (rel / config.coord_scale).reshape(src.size, -1)

            f = aggregate(f, static, e, ssg_geom, mode, params, f"ssg.{l}", tape)
        edge_log.append(used)
        out = decode_trajectories(f, props, layout, config, params, l, tape)
        layers.append(out)
        props = ad.reshape(out.trajectories, (n, t, 2))
        feats = f
    return IsgOutput(layers, feats, statics, edge_log, prop_log, layout)


def attention_baseline_forward(
    batch: SceneBatch | SceneSample,
    config: IsgConfig,
    params: ParamStore,
    anchors: AnchorSet,
    tape: Tape,
    dims: SceneDims = SceneDims(),
    edge_hook: EdgeHook | None = None,
) -> IsgOutput:
    """Same pipeline with dense single-head attention over all agents and all map elements."""
    cfg = replace(config, interaction="attention")
    return isg_forward(batch, cfg, params, anchors, tape, dims, edge_hook)


def ego_graph_feature(out: IsgOutput, batch: SceneBatch) -> Var:
    """Max over the ego's modality nodes of the final node features, one row per scene."""
    m = out.layout.modes
    idx = batch.ego_global[:, None] * m + np.arange(m)[None, :]
    rows = ad.gather(out.node_features, idx)  # (B, M, C)
    pooled, _ = ad.maxpool_set(rows, np.ones(idx.shape, dtype=bool))
    return pooled
