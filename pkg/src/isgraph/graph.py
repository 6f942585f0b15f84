"""k-nearest-neighbor edge construction for the dynamic and static scene graphs.

Dynamic nodes are (agent, modality) pairs carrying a trajectory proposal;
static nodes are map polylines.  Edges point from sources to a target and
are stored as a padded ``(n_targets, K)`` index array.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

DISTANCE_KINDS = ("trajectory", "current", "feature")


@dataclass(frozen=True)
class EdgeList:
    """Per-target neighbor indices sorted by (distance, index); ``-1`` pads short rows."""

    neighbors: np.ndarray  # (n_targets, K) int64
    distances: np.ndarray  # (n_targets, K) float64, inf on padding

    @property
    def mask(self) -> np.ndarray:
        return self.neighbors >= 0

    @property
    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def rows(self) -> list[list[int]]:
        return [[int(j) for j in row if j >= 0] for row in self.neighbors]

    def offset(self, target_shift: int, source_shift: int) -> "EdgeList":
        nb = np.where(self.neighbors >= 0, self.neighbors + source_shift, -1)
        return EdgeList(nb, self.distances)

    @staticmethod
    def concat(parts: Sequence["EdgeList"], k: int) -> "EdgeList":
        if not parts:
            return EdgeList(np.zeros((0, k), dtype=np.int64), np.zeros((0, k)))
        return EdgeList(np.concatenate([p.neighbors for p in parts]), np.concatenate([p.distances for p in parts]))

    @staticmethod
    def empty(n_targets: int, k: int = 1) -> "EdgeList":
        return EdgeList(np.full((n_targets, k), -1, dtype=np.int64), np.full((n_targets, k), np.inf))


def dsg_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Smallest same-timestep separation between two proposals ``(M_d, 2)``."""
    d = a - b
    return float(np.sqrt(np.min(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])))


def ssg_distance(a: np.ndarray, points: np.ndarray) -> float:
    """Smallest distance between any proposal point and any polyline point."""
    return float(np.min(cdist(np.asarray(a, dtype=np.float64).reshape(-1, 2), np.asarray(points, dtype=np.float64).reshape(-1, 2))))


def dsg_distance_matrix(props: np.ndarray) -> np.ndarray:
    """Pairwise trajectory distance for proposals ``(N, M_d, 2)``."""
    n, t, _ = props.shape
    dx = props[:, None, :, 0] - props[None, :, :, 0]
    dy = props[:, None, :, 1] - props[None, :, :, 1]
    return np.sqrt(np.min(dx * dx + dy * dy, axis=2))


def ssg_distance_matrix(props: np.ndarray, polylines: np.ndarray) -> np.ndarray:
    """Proposal-to-polyline distance ``(N, S)`` for ``props (N, M_d, 2)`` and ``polylines (S, M_s, 2)``."""
    n, t, _ = props.shape
    s, p, _ = polylines.shape
    if n == 0 or s == 0:
        return np.zeros((n, s))
    d = cdist(polylines.reshape(-1, 2), props.reshape(-1, 2)).reshape(s, p, n, t)
    return d.min(axis=1).min(axis=2).T


def point_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of ``a`` and rows of ``b``."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    return cdist(a, b)


def knn_select(dist: np.ndarray, k: int, eligible: np.ndarray | None = None) -> EdgeList:
    """The ``k`` eligible sources with smallest distance for every target row.

    Ties go to the lower source index.  Rows with fewer than ``k`` eligible
    sources keep all of them and pad the rest with ``-1``.
    """
    if k < 1:
        raise ValueError("K must be at least 1")
    dist = np.asarray(dist, dtype=np.float64)
    n_t, n_s = dist.shape
    if eligible is None:
        eligible = np.ones_like(dist, dtype=bool)
    masked = np.where(eligible, dist, np.inf)
    order = np.argsort(masked, axis=1, kind="stable")[:, :k]
    d_sel = np.take_along_axis(masked, order, axis=1)
    ok = np.take_along_axis(eligible, order, axis=1)
    nb = np.where(ok, order, -1)
    d_sel = np.where(ok, d_sel, np.inf)
    if nb.shape[1] < k:
        pad = k - nb.shape[1]
        nb = np.concatenate([nb, np.full((n_t, pad), -1, dtype=np.int64)], axis=1)
        d_sel = np.concatenate([d_sel, np.full((n_t, pad), np.inf)], axis=1)
    return EdgeList(nb.astype(np.int64), d_sel)


def knn_select_nodes(
    targets: Sequence,
    sources: Sequence,
    k: int,
    distance: Callable[[object, object], float],
    exclude: Callable[[int, int], bool] | None = None,
) -> EdgeList:
    """Object-level k-NN over arbitrary node sequences with a pairwise distance function."""
    dist = np.array([[distance(t, s) for s in sources] for t in targets], dtype=np.float64).reshape(len(targets), len(sources))
    eligible = np.ones(dist.shape, dtype=bool)
    if exclude is not None:
        for i in range(len(targets)):
            for j in range(len(sources)):
                eligible[i, j] = not exclude(i, j)
    return knn_select(dist, k, eligible)


def dsg_eligibility(node_agent: np.ndarray, exclude_same_agent: bool = True) -> np.ndarray:
    same = node_agent[:, None] == node_agent[None, :]
    if exclude_same_agent:
        return ~same
    return ~np.eye(len(node_agent), dtype=bool)


def build_dsg_edges(
    props: np.ndarray,
    node_agent: np.ndarray,
    k: int,
    kind: str = "trajectory",
    current: np.ndarray | None = None,
    features: np.ndarray | None = None,
    exclude_same_agent: bool = True,
) -> EdgeList:
    """DSG edges for one scene.

    ``kind`` selects the node distance: ``trajectory`` (min same-time gap of
    the proposals), ``current`` (gap between current agent positions, given
    per node in ``current``) or ``feature`` (L2 between node ``features``).
    """
    if kind == "trajectory":
        dist = dsg_distance_matrix(props)
    elif kind == "current":
        dist = point_distance_matrix(current, current)
    elif kind == "feature":
        dist = point_distance_matrix(features, features)
    else:
        raise ValueError(f"unknown distance kind {kind!r}")
    return knn_select(dist, k, dsg_eligibility(node_agent, exclude_same_agent))


def build_ssg_edges(
    props: np.ndarray,
    polylines: np.ndarray,
    k: int,
    kind: str = "trajectory",
    current: np.ndarray | None = None,
    features: np.ndarray | None = None,
    static_features: np.ndarray | None = None,
) -> EdgeList:
    n = len(props)
    if len(polylines) == 0:
        return EdgeList.empty(n, k)
    if kind == "trajectory":
        dist = ssg_distance_matrix(props, polylines)
    elif kind == "current":
        dist = ssg_distance_matrix(current[:, None, :], polylines)
    elif kind == "feature":
        dist = point_distance_matrix(features, static_features)
    else:
        raise ValueError(f"unknown distance kind {kind!r}")
    return knn_select(dist, k)


def dense_edges(eligible: np.ndarray) -> EdgeList:
    """All eligible sources for each target, in index order (attention baseline)."""
    n_t, n_s = eligible.shape
    k = max(1, int(eligible.sum(axis=1).max(initial=0)))
    return knn_select(np.zeros((n_t, n_s)), k, eligible)


# ------------------------------------------------------------------ debug dump


def format_edges(name: str, edges: EdgeList) -> list[str]:
    lines = [f"# {name} targets={edges.neighbors.shape[0]} K={edges.k}"]
    for t, (row, drow) in enumerate(zip(edges.neighbors, edges.distances)):
        keep = row >= 0
        src = " ".join(str(int(j)) for j in row[keep])
        dst = " ".join(f"{d:.6f}" for d in drow[keep])
        lines.append(f"{t} | {src} | {dst}")
    return lines


def parse_edges(lines: Sequence[str]) -> dict[str, list[list[int]]]:
    """Inverse of :func:`format_edges` for the neighbor indices (several blocks allowed)."""
    out: dict[str, list[list[int]]] = {}
    cur = None
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("# "):
            cur = line[2:].split()[0]
            out[cur] = []
            continue
        _, src, _ = line.split("|")
        out[cur].append([int(x) for x in src.split()])
    return out


def write_edge_dump(path: str | Path, blocks: Sequence[tuple[str, EdgeList]]) -> None:
    lines = []
    for name, edges in blocks:
        lines.extend(format_edges(name, edges))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

