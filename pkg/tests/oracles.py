"""Independent brute-force reference implementations used as test oracles.

Everything here is written with plain Python loops and ``math`` so it shares
no code path with the vectorized implementations under test.
"""

from __future__ import annotations

import math


def dsg_distance(a, b) -> float:
    best = math.inf
    for t in range(len(a)):
        dx = float(a[t][0]) - float(b[t][0])
        dy = float(a[t][1]) - float(b[t][1])
        best = min(best, math.sqrt(dx * dx + dy * dy))
    return best


def ssg_distance(a, points) -> float:
    best = math.inf
    for p in a:
        for q in points:
            dx = float(q[0]) - float(p[0])
            dy = float(q[1]) - float(p[1])
            best = min(best, math.sqrt(dx * dx + dy * dy))
    return best


def knn(dist, k: int, eligible=None) -> list[list[int]]:
    """Exhaustive sort of every row by (distance, source index)."""
    rows = []
    for i, row in enumerate(dist):
        cand = [(float(d), j) for j, d in enumerate(row) if eligible is None or eligible[i][j]]
        cand.sort()
        rows.append([j for _, j in cand[:k]])
    return rows


def box_corners(cx, cy, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    out = []
    for sl, sw in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        out.append((cx + sl * length / 2 * c - sw * width / 2 * s, cy + sl * length / 2 * s + sw * width / 2 * c))
    return out


def polygons_overlap(pa, pb) -> bool:
    """Separating-axis decision on the polygon edge normals; touching is not overlap."""
    for poly in (pa, pb):
        for i in range(len(poly)):
            x0, y0 = poly[i]
            x1, y1 = poly[(i + 1) % len(poly)]
            nx, ny = y0 - y1, x1 - x0
            proj_a = [nx * x + ny * y for x, y in pa]
            proj_b = [nx * x + ny * y for x, y in pb]
            if max(proj_a) <= min(proj_b) or max(proj_b) <= min(proj_a):
                return False
    return True


def motion_metrics(traj, gt, valid, miss: float = 2.0) -> tuple[float, float, float]:
    """(minADE, minFDE, miss rate) over agents with at least one valid step."""
    ades, fdes = [], []
    for a in range(len(traj)):
        steps = [t for t in range(len(valid[a])) if valid[a][t]]
        if not steps:
            continue
        best_ade, best_fde = math.inf, math.inf
        for m in range(len(traj[a])):
            errs = [math.sqrt((traj[a][m][t][0] - gt[a][t][0]) ** 2 + (traj[a][m][t][1] - gt[a][t][1]) ** 2) for t in steps]
            best_ade = min(best_ade, sum(errs) / len(errs))
            best_fde = min(best_fde, errs[-1])
        ades.append(best_ade)
        fdes.append(best_fde)
    if not ades:
        return 0.0, 0.0, 0.0
    return sum(ades) / len(ades), sum(fdes) / len(fdes), sum(1 for f in fdes if f > miss) / len(fdes)


def smooth_l1(x: float, beta: float = 1.0) -> float:
    return 0.5 * x * x / beta if abs(x) < beta else abs(x) - 0.5 * beta


def layer_motion_loss(traj, logits, gt, valid, regression: str = "smooth_l1") -> float:
    """Winner-takes-all regression on the lowest-ADE mode plus cross-entropy toward it, averaged over agents."""
    agents = [a for a in range(len(traj)) if any(valid[a])]
    if not agents:
        return 0.0
    reg = 0.0
    ce = 0.0
    for a in agents:
        steps = [t for t in range(len(valid[a])) if valid[a][t]]
        best, best_ade = 0, math.inf
        for m in range(len(traj[a])):
            ade = sum(math.sqrt((traj[a][m][t][0] - gt[a][t][0]) ** 2 + (traj[a][m][t][1] - gt[a][t][1]) ** 2) for t in steps) / len(steps)
            if ade < best_ade:
                best, best_ade = m, ade
        r = 0.0
        for t in steps:
            for c in range(2):
                d = traj[a][best][t][c] - gt[a][t][c]
                r += smooth_l1(d) if regression == "smooth_l1" else abs(d)
        reg += r / len(steps)
        top = max(logits[a])
        lse = top + math.log(sum(math.exp(v - top) for v in logits[a]))
        ce += lse - logits[a][best]
    return (reg + ce) / len(agents)


def plan_metrics(plans, gt, collisions, step_seconds: float = 0.5, horizons=(1, 2, 3)):
    """Per-horizon mean L2 at the horizon step and cumulative collision rate."""
    l2, col = [], []
    for h in horizons:
        k = int(round(h / step_seconds)) - 1
        l2.append(sum(math.sqrt((p[k][0] - g[k][0]) ** 2 + (p[k][1] - g[k][1]) ** 2) for p, g in zip(plans, gt)) / len(plans))
        col.append(sum(1 for c in collisions if any(c[: k + 1])) / len(plans))
    return l2, col


def edt(occupied, cell: float):
    """Distance from every cell center to the nearest occupied cell center, by exhaustive search."""
    h, w = len(occupied), len(occupied[0])
    occ = [(i, j) for i in range(h) for j in range(w) if occupied[i][j]]
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            out[i][j] = min(math.sqrt((i - a) ** 2 + (j - b) ** 2) for a, b in occ) * cell
    return out
