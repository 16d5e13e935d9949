"""Planar geometry: oriented boxes, polygons, polylines."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DomainError


def box_corners(x: float, y: float, w: float, l: float, yaw: float) -> np.ndarray:
    """[4, 2] corners; ``l`` runs along the heading, ``w`` across it."""
    c, s = math.cos(yaw), math.sin(yaw)
    fwd = np.array([c, s]) * (l / 2)
    left = np.array([-s, c]) * (w / 2)
    ctr = np.array([x, y])
    return np.stack([ctr + fwd + left, ctr - fwd + left, ctr - fwd - left, ctr + fwd - left])


def _axes(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, s], [-s, c]])


def box_overlap(a, b, tol: float = 1e-9) -> bool:
    """Separating-axis test for two oriented rectangles (x, y, w, l, yaw).

    Touching counts as overlap; gaps up to ``tol`` meters are treated as
    contact so exact corner-to-corner touches survive rounding.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a[2] <= 0 or a[3] <= 0 or b[2] <= 0 or b[3] <= 0:
        raise DomainError("box sizes must be positive")
    ca, cb = box_corners(*a), box_corners(*b)
    for axis in np.concatenate([_axes(a[4]), _axes(b[4])]):
        pa, pb = ca @ axis, cb @ axis
        if pa.max() < pb.min() - tol or pb.max() < pa.min() - tol:
            return False
    return True


def collision_interval(a, va, b, vb, horizon: float = math.inf) -> tuple[float, float] | None:
    """Time interval in [0, horizon] during which boxes moving at constant velocity overlap.

    Each separating axis gives a linear condition in t; the overlap interval
    is the intersection over the four axes. Returns None if they never touch.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    rel = np.asarray(vb, dtype=np.float64) - np.asarray(va, dtype=np.float64)
    ca, cb = box_corners(*a), box_corners(*b)
    lo, hi = 0.0, horizon
    for axis in np.concatenate([_axes(a[4]), _axes(b[4])]):
        pa, pb = ca @ axis, cb @ axis
        a0, a1, b0, b1 = pa.min(), pa.max(), pb.min(), pb.max()
        s = float(rel @ axis)
        if abs(s) < 1e-12:
            if b1 < a0 or a1 < b0:
                return None
            continue
        t0, t1 = (a0 - b1) / s, (a1 - b0) / s
        if t0 > t1:
            t0, t1 = t1, t0
        lo, hi = max(lo, t0), min(hi, t1)
        if lo > hi:
            return None
    return lo, hi


def time_to_collision(a, va, b, vb, horizon: float = math.inf) -> float:
    """First contact time of two constant-velocity boxes, ``inf`` if none within ``horizon``."""
    iv = collision_interval(a, va, b, vb, horizon)
    return math.inf if iv is None else iv[0]


def points_in_polygon(points: np.ndarray, poly: np.ndarray, tol: float | None = 1e-9) -> np.ndarray:
    """Even-odd rule containment for [N, 2] points.

    Points within ``tol`` of an edge count as inside; ``tol=None`` skips that
    (costly) check, which only matters exactly on the boundary.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.asarray(poly, dtype=np.float64)
    x, y = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = poly[:, 0][None], poly[:, 1][None]
    x1, y1 = np.roll(poly[:, 0], -1)[None], np.roll(poly[:, 1], -1)[None]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    inside = (np.sum(straddle & (x < xi), axis=1) % 2) == 1
    if tol is None:
        return inside
    on_edge = point_segment_distance(pts, poly, np.roll(poly, -1, axis=0)).min(axis=1) <= tol
    return inside | on_edge


def point_segment_distance(pts: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """[N, M] distances from N points to M segments."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    d = p1 - p0
    len2 = np.maximum((d ** 2).sum(-1), 1e-18)
    rel = pts[:, None, :] - p0[None]
    t = np.clip((rel * d[None]).sum(-1) / len2[None], 0.0, 1.0)
    closest = p0[None] + t[..., None] * d[None]
    return np.linalg.norm(pts[:, None, :] - closest, axis=-1)


def segments_intersect(p, q, a, b) -> bool:
    """Closed-segment intersection test for pq and ab."""
    p, q, a, b = (np.asarray(v, dtype=np.float64) for v in (p, q, a, b))

    def orient(u, v, w):
        val = (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])
        return 0 if abs(val) < 1e-12 else (1 if val > 0 else -1)

    def on_seg(u, v, w):
        return min(u[0], v[0]) - 1e-12 <= w[0] <= max(u[0], v[0]) + 1e-12 and \
            min(u[1], v[1]) - 1e-12 <= w[1] <= max(u[1], v[1]) + 1e-12

    o1, o2, o3, o4 = orient(p, q, a), orient(p, q, b), orient(a, b, p), orient(a, b, q)
    if o1 != o2 and o3 != o4:
        return True
    return (o1 == 0 and on_seg(p, q, a)) or (o2 == 0 and on_seg(p, q, b)) or \
        (o3 == 0 and on_seg(a, b, p)) or (o4 == 0 and on_seg(a, b, q))


# --------------------------------------------------------------- polylines


def polyline_distance(pts: np.ndarray, line: np.ndarray, step: float = 0.05) -> np.ndarray:
    """Approximate distance to a polyline via nearest vertex of a densified copy.

    Overestimates the exact distance by at most ``step / 2``-ish; intended for
    rasterization, not scoring.
    """
    tree = cKDTree(resample(np.asarray(line, dtype=np.float64), step))
    return tree.query(np.asarray(pts, dtype=np.float64).reshape(-1, 2))[0]


def arc_lengths(line: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(line, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample(line: np.ndarray, step: float) -> np.ndarray:
    line = np.asarray(line, dtype=np.float64)
    s = arc_lengths(line)
    n = max(int(math.ceil(s[-1] / step)), 1)
    q = np.linspace(0.0, s[-1], n + 1)
    return np.stack([np.interp(q, s, line[:, 0]), np.interp(q, s, line[:, 1])], axis=1)


def tangents(line: np.ndarray) -> np.ndarray:
    """Unit tangent per vertex (central differences)."""
    g = np.gradient(line, axis=0)
    return g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)


def offset_polyline(line: np.ndarray, d: float) -> np.ndarray:
    """Shift every vertex by ``d`` along its left normal."""
    t = tangents(line)
    return line + d * np.stack([-t[:, 1], t[:, 0]], axis=1)


def project_to_polyline(pts: np.ndarray, line: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest-point projection of [N, 2] points.

    Returns (arc length s, unsigned distance, unit tangent [N, 2]) at the
    projection.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    p0, p1 = line[:-1], line[1:]
    d = p1 - p0
    len2 = np.maximum((d ** 2).sum(-1), 1e-18)
    rel = pts[:, None, :] - p0[None]
    t = np.clip((rel * d[None]).sum(-1) / len2[None], 0.0, 1.0)
    closest = p0[None] + t[..., None] * d[None]
    dist = np.linalg.norm(pts[:, None, :] - closest, axis=-1)
    seg = dist.argmin(1)
    rows = np.arange(len(pts))
    s_cum = arc_lengths(line)
    seg_len = np.sqrt(len2)
    s = s_cum[seg] + t[rows, seg] * seg_len[seg]
    tan = d[seg] / seg_len[seg][:, None]
    return s, dist[rows, seg], tan


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi
