"""Planar geometry primitives: angles, oriented rectangles, polylines, polygons.

Everything operates on plain floats / numpy arrays in the world frame
(right-handed, meters, heading 0 = +x).
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def normalize_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap into (-pi, pi]."""
    out = np.mod(a, TWO_PI)
    out = np.where(out > math.pi, out - TWO_PI, out)
    # np.mod maps exact -pi to +pi already; keep +pi, move anything <= -pi up
    out = np.where(out <= -math.pi, out + TWO_PI, out)
    return out


def rect_corners(
    x: float, y: float, heading: float, half_length: float, half_width: float
) -> np.ndarray:
    """Corners of an oriented rectangle, counterclockwise, world frame.

    Order: front-left, rear-left, rear-right, front-right for heading 0 this is
    (+l,+w), (-l,+w), (-l,-w), (+l,-w) -- counterclockwise.
    """
    c, s = math.cos(heading), math.sin(heading)
    local = np.array(
        [
            [half_length, half_width],
            [-half_length, half_width],
            [-half_length, -half_width],
            [half_length, -half_width],
        ]
    )
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def rect_corners_batch(
    xy: np.ndarray, heading: np.ndarray, half_length: float, half_width: float
) -> np.ndarray:
    """Corners for a batch of poses. xy: (..., 2), heading: (...,) -> (..., 4, 2)."""
    c = np.cos(heading)
    s = np.sin(heading)
    lx = np.array([half_length, -half_length, -half_length, half_length])
    ly = np.array([half_width, half_width, -half_width, -half_width])
    # (...,4)
    wx = xy[..., 0:1] + lx * c[..., None] - ly * s[..., None]
    wy = xy[..., 1:2] + lx * s[..., None] + ly * c[..., None]
    return np.stack([wx, wy], axis=-1)


def _project_extents(corners: np.ndarray, axes: np.ndarray):
    # corners (...,4,2), axes (...,A,2) -> min/max (...,A)
    proj = np.einsum("...ck,...ak->...ac", corners, axes)
    return proj.min(axis=-1), proj.max(axis=-1)


def rects_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Separating-axis test for two oriented rectangles; touching counts as overlap."""
    return bool(
        rects_overlap_batch(corners_a[None, ...], corners_b[None, ...])[0]
    )


def rects_overlap_batch(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """Vectorized SAT over broadcastable batches of rectangle corners.

    corners_a, corners_b: (..., 4, 2) with broadcast-compatible leading shape.
    Returns a boolean array of the broadcast shape. Touching counts as overlap,
    so separation requires a strictly positive gap on some axis.
    """
    corners_a, corners_b = np.broadcast_arrays(corners_a, corners_b)
    # Two distinct edge normals per rectangle suffice for SAT.
    ea = corners_a[..., 1, :] - corners_a[..., 0, :]
    eb = corners_a[..., 3, :] - corners_a[..., 0, :]
    ec = corners_b[..., 1, :] - corners_b[..., 0, :]
    ed = corners_b[..., 3, :] - corners_b[..., 0, :]
    axes = np.stack([ea, eb, ec, ed], axis=-2)  # (...,4,2)
    norm = np.linalg.norm(axes, axis=-1, keepdims=True)
    # Degenerate (zero-size) edges produce a zero axis; projections collapse
    # to a point and never separate, which is the safe default.
    axes = np.divide(axes, norm, out=np.zeros_like(axes), where=norm > 0)
    amin, amax = _project_extents(corners_a, axes)
    bmin, bmax = _project_extents(corners_b, axes)
    separated = (amax < bmin) | (bmax < amin)
    return ~separated.any(axis=-1)


def rects_overlap_pairs(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """SAT over aligned pairs: corners_a, corners_b both (K, 4, 2) -> (K,) bool."""
    if len(corners_a) == 0:
        return np.zeros(0, dtype=bool)
    return rects_overlap_batch(corners_a, corners_b)


def point_in_polygon(pt, polygon: np.ndarray) -> bool:
    """Inclusive point-in-polygon test (boundary counts as inside)."""
    return bool(points_in_polygon(np.asarray(pt, dtype=float)[None, :], polygon)[0])


def points_in_polygon(pts: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Vectorized inclusive point-in-polygon (ray casting + boundary check).

    pts: (N, 2), polygon: (M, 2) simple ring (closing edge implied).
    """
    pts = np.asarray(pts, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    # Ray cast to +x: count crossings of edges straddling the horizontal line.
    straddle = (y0[None, :] > y[:, None]) != (y1[None, :] > y[:, None])
    dy = y1 - y0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (y[:, None] - y0[None, :]) / dy[None, :]
    x_cross = x0[None, :] + t * (x1 - x0)[None, :]
    crossings = (straddle & (x[:, None] < x_cross)).sum(axis=1)
    inside = (crossings % 2) == 1

    # Boundary: distance from each point to each edge segment == 0.
    ex = (x1 - x0)[None, :]
    ey = (y1 - y0)[None, :]
    px = x[:, None] - x0[None, :]
    py = y[:, None] - y0[None, :]
    seg_len2 = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.clip(np.where(seg_len2 > 0, (px * ex + py * ey) / seg_len2, 0.0), 0.0, 1.0)
    dx = px - u * ex
    dy2 = py - u * ey
    on_edge = (dx * dx + dy2 * dy2 < 1e-18).any(axis=1)
    return inside | on_edge


def polygon_as_aabb(polygon: np.ndarray):
    """(x0, y0, x1, y1) when the polygon is an axis-aligned rectangle, else None."""
    poly = np.asarray(polygon, dtype=float)
    if len(poly) != 4:
        return None
    xs = np.unique(poly[:, 0])
    ys = np.unique(poly[:, 1])
    if len(xs) != 2 or len(ys) != 2:
        return None
    want = {(x, y) for x in xs for y in ys}
    if {(x, y) for x, y in poly} != want:
        return None
    return float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1])


def points_in_polygons(pts: np.ndarray, polygons) -> np.ndarray:
    """Inclusive membership of points in a union of polygons.

    Axis-aligned rectangles take a fast bounding-box path.
    """
    pts = np.asarray(pts, dtype=float)
    inside = np.zeros(len(pts), dtype=bool)
    for poly in polygons:
        todo = ~inside
        if not todo.any():
            break
        aabb = polygon_as_aabb(poly)
        sub = pts[todo]
        if aabb is not None:
            x0, y0, x1, y1 = aabb
            hit = (sub[:, 0] >= x0) & (sub[:, 0] <= x1) & (sub[:, 1] >= y0) & (sub[:, 1] <= y1)
        else:
            hit = points_in_polygon(sub, poly)
        inside[todo] |= hit
    return inside


def polyline_arclengths(pts: np.ndarray) -> np.ndarray:
    """Cumulative arclength of a polyline, starting at 0."""
    pts = np.asarray(pts, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def polyline_headings(pts: np.ndarray) -> np.ndarray:
    """Per-vertex headings from segment directions (last vertex repeats)."""
    pts = np.asarray(pts, dtype=float)
    d = np.diff(pts, axis=0)
    h = np.arctan2(d[:, 1], d[:, 0])
    if len(h) == 0:
        return np.zeros(len(pts))
    return np.concatenate([h, h[-1:]])


def resample_polyline(pts: np.ndarray, ds: float) -> np.ndarray:
    """Resample a polyline at uniform arclength step ds (piecewise linear).

    The first and last points are preserved exactly.
    """
    pts = np.asarray(pts, dtype=float)
    s = polyline_arclengths(pts)
    total = s[-1]
    if total <= 0:
        return pts[:1].copy()
    n = max(1, int(math.floor(total / ds + 1e-9)))
    targets = np.arange(n + 1) * ds
    if total - targets[-1] > 1e-9:
        targets = np.concatenate([targets, [total]])
    else:
        targets[-1] = total
    x = np.interp(targets, s, pts[:, 0])
    y = np.interp(targets, s, pts[:, 1])
    return np.stack([x, y], axis=1)


def project_point_to_polyline(p, pts: np.ndarray, s_cum: np.ndarray | None = None):
    """Project a point onto a polyline.

    Returns (arclength, signed_lateral, heading_at_foot, foot_point).
    Lateral is positive to the left of the travel direction.
    """
    pts = np.asarray(pts, dtype=float)
    p = np.asarray(p, dtype=float)
    if s_cum is None:
        s_cum = polyline_arclengths(pts)
    a = pts[:-1]
    b = pts[1:]
    e = b - a
    seg_len2 = (e * e).sum(axis=1)
    rel = p[None, :] - a
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(seg_len2 > 0, (rel * e).sum(axis=1) / seg_len2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    foot = a + u[:, None] * e
    d2 = ((p[None, :] - foot) ** 2).sum(axis=1)
    i = int(np.argmin(d2))
    seg_len = math.sqrt(seg_len2[i]) if seg_len2[i] > 0 else 0.0
    s = s_cum[i] + u[i] * seg_len
    heading = math.atan2(e[i, 1], e[i, 0]) if seg_len > 0 else 0.0
    dx = p - foot[i]
    # Left-normal of the segment direction.
    lateral = -math.sin(heading) * dx[0] + math.cos(heading) * dx[1]
    return float(s), float(lateral), float(heading), foot[i]


def project_points_to_polyline(ps: np.ndarray, pts: np.ndarray, s_cum: np.ndarray | None = None):
    """Vectorized projection of many points onto one polyline.

    ps: (N, 2). Returns (s: (N,), lateral: (N,)).
    """
    pts = np.asarray(pts, dtype=float)
    ps = np.asarray(ps, dtype=float)
    if s_cum is None:
        s_cum = polyline_arclengths(pts)
    ax, ay = pts[:-1, 0], pts[:-1, 1]
    ex = np.diff(pts[:, 0])
    ey = np.diff(pts[:, 1])
    len2 = ex * ex + ey * ey
    inv_len2 = np.where(len2 > 0, 1.0 / np.maximum(len2, 1e-300), 0.0)
    dx = ps[:, 0, None] - ax
    dy = ps[:, 1, None] - ay
    u = np.clip((dx * ex + dy * ey) * inv_len2, 0.0, 1.0)
    fx = dx - u * ex
    fy = dy - u * ey
    d2 = fx * fx + fy * fy
    idx = np.argmin(d2, axis=1)
    rows = np.arange(len(ps))
    u_best = u[rows, idx]
    s = s_cum[idx] + u_best * np.sqrt(len2[idx])
    head = np.arctan2(ey[idx], ex[idx])
    lateral = -np.sin(head) * fx[rows, idx] + np.cos(head) * fy[rows, idx]
    return s, lateral


def interpolate_on_polyline(pts: np.ndarray, s_cum: np.ndarray, s: np.ndarray):
    """Positions and headings at arclengths s (clamped to the polyline range)."""
    s = np.clip(np.asarray(s, dtype=float), s_cum[0], s_cum[-1])
    x = np.interp(s, s_cum, pts[:, 0])
    y = np.interp(s, s_cum, pts[:, 1])
    idx = np.clip(np.searchsorted(s_cum, s, side="right") - 1, 0, len(pts) - 2)
    d = pts[idx + 1] - pts[idx]
    heading = np.arctan2(d[:, 1], d[:, 0])
    return np.stack([x, y], axis=1), heading
