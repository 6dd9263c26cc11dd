"""Planar geometry: polylines, oriented rectangles, frame transforms.

Conventions: world frame x east, y north, yaw counter-clockwise from +x.
Ego frame: x forward, y left.  Rectangles are ``[cx, cy, w, h, yaw]`` where
``w`` is the extent along the rectangle's local x axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MIN_SEGMENT = 1e-9


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    # in-range inputs pass through untouched
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def as_array(self):
        return np.array([self.x, self.y, self.yaw])


@dataclass(frozen=True)
class OrientedRect:
    cx: float
    cy: float
    w: float
    h: float
    yaw: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"rect extents must be positive, got w={self.w}, h={self.h}")

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h, self.yaw])


def as_polyline(points) -> np.ndarray:
    """Validate and return an (N, 2) float array."""
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
        raise ValidationError(f"polyline needs >= 2 points of shape (N, 2), got {p.shape}")
    seg = np.hypot(*np.diff(p, axis=0).T)
    if np.any(seg <= MIN_SEGMENT):
        raise ValidationError("polyline has coincident consecutive points")
    return p


def dedupe_points(points, tol=1e-6) -> np.ndarray:
    """Drop points closer than ``tol`` to the previously kept point."""
    p = np.asarray(points, dtype=float)
    keep = [0]
    for i in range(1, len(p)):
        if math.hypot(*(p[i] - p[keep[-1]])) > tol:
            keep.append(i)
    return p[keep]


def _point_segment_distance(pts, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def rdp_simplify(points, epsilon: float) -> np.ndarray:
    """Ramer-Douglas-Peucker simplification.

    Distances are measured to the chord *segment* (not the infinite line), so
    every dropped point is within ``epsilon`` of the returned chain.
    """
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    p = np.asarray(points, dtype=float)
    n = len(p)
    if n <= 2:
        return p.copy()
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _point_segment_distance(p[i + 1:j], p[i], p[j])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return p[keep]


def polyline_to_rects(points, width: float, id_base: int = 0) -> np.ndarray:
    """One rectangle per segment: rows ``[cx, cy, length, width, heading, id]``."""
    if width <= 0:
        raise ValidationError("width must be positive")
    p = np.asarray(points, dtype=float)
    d = np.diff(p, axis=0)
    mid = 0.5 * (p[:-1] + p[1:])
    out = np.empty((len(d), 6))
    out[:, 0:2] = mid
    out[:, 2] = np.hypot(d[:, 0], d[:, 1])
    out[:, 3] = width
    out[:, 4] = np.arctan2(d[:, 1], d[:, 0])
    out[:, 5] = id_base + np.arange(len(d))
    return out


def _cos_sin(yaw):
    # snap float noise at multiples of pi/2 so axis-aligned boxes stay exact
    c, s = np.cos(yaw), np.sin(yaw)
    return np.where(np.abs(c) < 1e-15, 0.0, c), np.where(np.abs(s) < 1e-15, 0.0, s)


def rect_corners(rects) -> np.ndarray:
    """Corners of rect rows ``[cx, cy, w, h, yaw, ...]`` as (..., 4, 2), CCW."""
    r = np.asarray(rects, dtype=float)
    c, s = _cos_sin(r[..., 4])
    hw, hh = 0.5 * r[..., 2], 0.5 * r[..., 3]
    ux = np.stack([c * hw, s * hw], axis=-1)
    uy = np.stack([-s * hh, c * hh], axis=-1)
    ctr = r[..., 0:2]
    return np.stack([ctr + ux + uy, ctr - ux + uy, ctr - ux - uy, ctr + ux - uy], axis=-2)


def _axes(rects):
    c, s = _cos_sin(rects[..., 4])
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], axis=-2)


def _separated(axes, ca, cb):
    # axes (..., k, 2); ca, cb (..., m, 2).  True where some axis separates.
    pa = np.einsum("...kd,...md->...km", axes, ca)
    pb = np.einsum("...kd,...md->...km", axes, cb)
    sep = (pa.max(-1) < pb.min(-1)) | (pb.max(-1) < pa.min(-1))
    return sep.any(-1)


def obb_overlap(a, b) -> bool:
    """Separating-axis test for two oriented boxes; touching counts as overlap."""
    ra = a.as_array() if isinstance(a, OrientedRect) else np.asarray(a, float)[:5]
    rb = b.as_array() if isinstance(b, OrientedRect) else np.asarray(b, float)[:5]
    return bool(obb_overlap_many(ra, rb[None])[0])


def obb_overlap_many(rect, others) -> np.ndarray:
    """Vectorised overlap of one rect against an (M, >=5) array of rects."""
    others = np.asarray(others, dtype=float).reshape(-1, np.shape(others)[-1])
    if len(others) == 0:
        return np.zeros(0, dtype=bool)
    rect = np.asarray(rect, dtype=float)[:5]
    ca = np.broadcast_to(rect_corners(rect), (len(others), 4, 2))
    cb = rect_corners(others[:, :5])
    axes = np.concatenate([np.broadcast_to(_axes(rect), (len(others), 2, 2)),
                           _axes(others[:, :5])], axis=1)
    return ~_separated(axes, ca, cb)


def obb_hits_segments(rect, starts, ends) -> np.ndarray:
    """Overlap of one rect with zero-width segments; touching counts."""
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    ends = np.asarray(ends, dtype=float).reshape(-1, 2)
    m = len(starts)
    if m == 0:
        return np.zeros(0, dtype=bool)
    rect = np.asarray(rect, dtype=float)[:5]
    ca = np.broadcast_to(rect_corners(rect), (m, 4, 2))
    cb = np.stack([starts, ends], axis=1)
    d = ends - starts
    normal = np.stack([-d[:, 1], d[:, 0]], axis=-1)[:, None, :]
    axes = np.concatenate([np.broadcast_to(_axes(rect), (m, 2, 2)), normal], axis=1)
    return ~_separated(axes, ca, cb)


def _rot(yaw):
    # snap float noise at multiples of pi/2 so axis-aligned frames stay exact
    c, s = math.cos(yaw), math.sin(yaw)
    if abs(c) < 1e-15:
        c = 0.0
    if abs(s) < 1e-15:
        s = 0.0
    return c, s


def world_to_ego(z, ego):
    """Express points (..., 2) or poses (..., 3) in the frame of ``ego``.

    ``ego`` is a :class:`Pose` or ``(x, y, yaw)``.
    """
    ex, ey, eyaw = (ego.x, ego.y, ego.yaw) if isinstance(ego, Pose) else tuple(map(float, ego[:3]))
    c, s = _rot(eyaw)
    is_pose = isinstance(z, Pose)
    arr = z.as_array() if is_pose else np.asarray(z, dtype=float)
    dx = arr[..., 0] - ex
    dy = arr[..., 1] - ey
    out = np.array(arr, dtype=float, copy=True)
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    if arr.shape[-1] >= 3:
        out[..., 2] = wrap_angle(arr[..., 2] - eyaw)
    return Pose(*map(float, out)) if is_pose else out


def ego_to_world(z, ego):
    """Inverse of :func:`world_to_ego`."""
    ex, ey, eyaw = (ego.x, ego.y, ego.yaw) if isinstance(ego, Pose) else tuple(map(float, ego[:3]))
    c, s = _rot(eyaw)
    is_pose = isinstance(z, Pose)
    arr = z.as_array() if is_pose else np.asarray(z, dtype=float)
    out = np.array(arr, dtype=float, copy=True)
    out[..., 0] = c * arr[..., 0] - s * arr[..., 1] + ex
    out[..., 1] = s * arr[..., 0] + c * arr[..., 1] + ey
    if arr.shape[-1] >= 3:
        out[..., 2] = wrap_angle(arr[..., 2] + eyaw)
    return Pose(*map(float, out)) if is_pose else out


def polyline_nearest(q, points):
    """Nearest point on a polyline to ``q``.

    Returns ``(arclength, distance, heading)``: arclength along the polyline to
    the projection, Euclidean distance, and the containing segment's heading.
    Ties go to the smaller arclength.
    """
    p = np.asarray(points, dtype=float)
    q = np.asarray(q, dtype=float)[:2]
    a, b = p[:-1], p[1:]
    ab = b - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", q - a, ab) / np.where(seg_len2 > 0, seg_len2, 1.0), 0.0, 1.0)
    proj = a + t[:, None] * ab
    dist = np.hypot(*(q - proj).T)
    k = int(np.argmin(dist))
    seg_len = np.sqrt(seg_len2)
    s = float(seg_len[:k].sum() + t[k] * seg_len[k])
    return s, float(dist[k]), float(math.atan2(ab[k, 1], ab[k, 0]))


def polyline_length(points) -> float:
    p = np.asarray(points, dtype=float)
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Points at uniform arclength spacing (last point always included)."""
    p = np.asarray(points, dtype=float)
    seg = np.hypot(*np.diff(p, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.arange(0.0, cum[-1], spacing)
    if cum[-1] - s[-1] > 1e-9:
        s = np.append(s, cum[-1])
    return np.stack([np.interp(s, cum, p[:, 0]), np.interp(s, cum, p[:, 1])], axis=-1)
