"""Oriented boxes and small planar helpers shared by the generator, planner and metrics."""

from __future__ import annotations

import numpy as np


def rot(theta) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    return np.cos(theta), np.sin(theta)


def to_local(points: np.ndarray, origin: np.ndarray, heading) -> np.ndarray:
    """World points (..., 2) into the frame at ``origin`` facing ``heading``."""
    c, s = rot(heading)
    d = points - origin
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def to_world(points: np.ndarray, origin: np.ndarray, heading) -> np.ndarray:
    c, s = rot(heading)
    x, y = points[..., 0], points[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1) + origin


def box_corners(center, heading, length, width) -> np.ndarray:
    """Corners (..., 4, 2) counter-clockwise from front-left."""
    center = np.asarray(center, dtype=np.float64)
    c, s = rot(heading)
    hl = np.asarray(length, dtype=np.float64) / 2.0
    hw = np.asarray(width, dtype=np.float64) / 2.0
    ux = np.stack([c, s], axis=-1) * hl[..., None]
    uy = np.stack([-s, c], axis=-1) * hw[..., None]
    return np.stack([center + ux + uy, center - ux + uy, center - ux - uy, center + ux - uy], axis=-2)


def boxes_overlap(a_center, a_heading, a_len, a_wid, b_center, b_heading, b_len, b_wid) -> np.ndarray:
    """Separating-axis test for pairs of oriented rectangles; broadcasts over leading dims.

    Touching boxes (zero-area contact) do not count as overlapping.
    """
    a_center = np.asarray(a_center, dtype=np.float64)
    b_center = np.asarray(b_center, dtype=np.float64)
    ca, sa = rot(a_heading)
    cb, sb = rot(b_heading)
    axes = [np.stack([ca, sa], -1), np.stack([-sa, ca], -1), np.stack([cb, sb], -1), np.stack([-sb, cb], -1)]
    d = b_center - a_center
    half_a = (np.asarray(a_len) / 2.0, np.asarray(a_wid) / 2.0)
    half_b = (np.asarray(b_len) / 2.0, np.asarray(b_wid) / 2.0)
    sep = np.zeros(np.broadcast(d[..., 0], ca, cb).shape, dtype=bool)
    for ax in axes:
        ra = half_a[0] * np.abs(ax[..., 0] * ca + ax[..., 1] * sa) + half_a[1] * np.abs(-ax[..., 0] * sa + ax[..., 1] * ca)
        rb = half_b[0] * np.abs(ax[..., 0] * cb + ax[..., 1] * sb) + half_b[1] * np.abs(-ax[..., 0] * sb + ax[..., 1] * cb)
        dist = np.abs(d[..., 0] * ax[..., 0] + d[..., 1] * ax[..., 1])
        sep |= dist >= ra + rb
    return ~sep


def points_in_box(points: np.ndarray, center, heading, length, width) -> np.ndarray:
    """Boolean mask: which of ``points`` (..., 2) lie strictly inside the box."""
    local = to_local(points, np.asarray(center, dtype=np.float64), heading)
    return (np.abs(local[..., 0]) < length / 2.0) & (np.abs(local[..., 1]) < width / 2.0)


def path_headings(start: np.ndarray, start_heading: float, points: np.ndarray, min_step: float = 1e-3) -> np.ndarray:
    """Heading at each point of a trajectory from consecutive displacements.

    Steps shorter than ``min_step`` keep the previous heading.
    """
    out = np.empty(len(points))
    prev_p, prev_h = np.asarray(start, dtype=np.float64), float(start_heading)
    for t, p in enumerate(points):
        d = p - prev_p
        if np.hypot(d[0], d[1]) >= min_step:
            prev_h = float(np.arctan2(d[1], d[0]))
        out[t] = prev_h
        prev_p = p
    return out


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """``n`` points equally spaced in arc length along ``points``."""
    points = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(target, s, points[:, 0]), np.interp(target, s, points[:, 1])], axis=-1)
