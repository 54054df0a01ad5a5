"""Planar geometry primitives shared by track generation, raycasting and collision."""
from __future__ import annotations

import math

import numpy as np

TAU = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(a, TAU)
    if r <= -math.pi:
        r += TAU
    return r


def cross2(ax, ay, bx, by):
    """z-component of the 2D cross product a x b (works on scalars or arrays)."""
    return ax * by - ay * bx


def vertex_normals(points: np.ndarray) -> np.ndarray:
    """Unit left-hand normals at each vertex of a closed polyline.

    ``points`` has shape (N+1, 2) with points[-1] == points[0].  The normal at
    a vertex is the normalized sum of the left normals of its two adjacent
    segments, so it bisects the joint.  Returns shape (N+1, 2) with the last
    row equal to the first.
    """
    pts = np.asarray(points, dtype=float)
    seg = pts[1:] - pts[:-1]                      # (N, 2)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(lengths < 1e-12):
        raise ValueError("degenerate segment in closed polyline")
    tangents = seg / lengths[:, None]
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)  # left of travel
    prev = np.roll(normals, 1, axis=0)            # normal of segment ending at vertex i
    bisector = normals + prev
    norm = np.hypot(bisector[:, 0], bisector[:, 1])
    # ~180 degree joints would zero the bisector; fall back to the outgoing normal
    tiny = norm < 1e-9
    bisector[tiny] = normals[tiny]
    norm[tiny] = 1.0
    out = np.empty_like(pts)
    out[:-1] = bisector / norm[:, None]
    out[-1] = out[0]
    return out


def offset_polyline(points: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Offset a closed polyline along its vertex normals by per-vertex amounts."""
    return np.asarray(points, float) + np.asarray(offsets, float)[:, None] * vertex_normals(points)


def segments_intersect(p1, p2, q1, q2) -> bool:
    """True if closed segments [p1,p2] and [q1,q2] share at least one point."""
    p1 = np.asarray(p1, float); p2 = np.asarray(p2, float)
    q1 = np.asarray(q1, float); q2 = np.asarray(q2, float)
    d1 = cross2(*(q2 - q1), *(p1 - q1))
    d2 = cross2(*(q2 - q1), *(p2 - q1))
    d3 = cross2(*(p2 - p1), *(q1 - p1))
    d4 = cross2(*(p2 - p1), *(q2 - p1))
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and \
       ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False


def _on_segment(a, b, p) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def closed_polyline_self_intersections(points: np.ndarray) -> list[tuple[int, int]]:
    """Indices (i, j) of non-adjacent segment pairs of a closed polyline that touch.

    ``points`` is (N+1, 2) with the closing point repeated.  Adjacency is taken
    modulo N, so the wrap pair (0, N-1) is skipped.  Vectorized over all pairs
    with a bounding-box prefilter.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts) - 1
    a = pts[:-1]
    b = pts[1:]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)

    ii, jj = np.triu_indices(n, k=2)
    wrap = (ii == 0) & (jj == n - 1)
    ii, jj = ii[~wrap], jj[~wrap]

    boxes = ~((hi[ii, 0] < lo[jj, 0]) | (hi[jj, 0] < lo[ii, 0]) |
              (hi[ii, 1] < lo[jj, 1]) | (hi[jj, 1] < lo[ii, 1]))
    ii, jj = ii[boxes], jj[boxes]
    if len(ii) == 0:
        return []

    p, r = a[ii], b[ii] - a[ii]
    q, s = a[jj], b[jj] - a[jj]
    pq = q - p
    denom = cross2(r[:, 0], r[:, 1], s[:, 0], s[:, 1])
    t_num = cross2(pq[:, 0], pq[:, 1], s[:, 0], s[:, 1])
    u_num = cross2(pq[:, 0], pq[:, 1], r[:, 0], r[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    proper = (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    # collinear overlap: denominator zero and the two lines coincide
    collinear = (denom == 0) & (u_num == 0)
    if np.any(collinear):
        for k in np.nonzero(collinear)[0]:
            if segments_intersect(p[k], p[k] + r[k], q[k], q[k] + s[k]):
                proper[k] = True
    hits = np.nonzero(proper)[0]
    return [(int(ii[k]), int(jj[k])) for k in hits]


def ray_hits(origin: np.ndarray, directions: np.ndarray,
             seg_a: np.ndarray, seg_b: np.ndarray, max_range: float,
             chunk: int = 512) -> np.ndarray:
    """Nearest-hit distances of rays against a set of segments, clipped to max_range.

    origin (2,), directions (B, 2) unit vectors, seg_a/seg_b (S, 2).
    Returns (B,) distances; rays that hit nothing read max_range.
    """
    origin = np.asarray(origin, float)
    directions = np.asarray(directions, float)
    e = seg_b - seg_a                              # (S, 2)
    ao = seg_a - origin                            # (S, 2)
    out = np.full(len(directions), max_range)
    if len(seg_a) == 0:
        return out
    for start in range(0, len(directions), chunk):
        d = directions[start:start + chunk]        # (b, 2)
        denom = d[:, 0:1] * e[None, :, 1] - d[:, 1:2] * e[None, :, 0]   # (b, S)
        t_num = ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]
        u_num = ao[None, :, 0] * d[:, 1:2] - ao[None, :, 1] * d[:, 0:1]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = t_num / denom
            u = u_num / denom
        valid = (denom != 0) & (t >= 0) & (u >= 0) & (u <= 1)
        t = np.where(valid, t, np.inf)
        out[start:start + chunk] = np.minimum(t.min(axis=1), max_range)
    return out


def rect_corners(cx: float, cy: float, heading: float,
                 length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, counter-clockwise, shape (4, 2)."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def convex_polygon_is_ccw(vertices: np.ndarray) -> bool:
    """True if the polygon is convex with counter-clockwise winding."""
    v = np.asarray(vertices, float)
    nxt = np.roll(v, -1, axis=0)
    nxt2 = np.roll(v, -2, axis=0)
    cr = cross2(nxt[:, 0] - v[:, 0], nxt[:, 1] - v[:, 1],
                nxt2[:, 0] - nxt[:, 0], nxt2[:, 1] - nxt[:, 1])
    return bool(np.all(cr > 0))


def convex_polygons_overlap(poly_a: np.ndarray, poly_b: np.ndarray) -> bool:
    """Separating-axis overlap test for two convex polygons (closed sets).

    Touching boundaries count as overlap: the shapes are disjoint only if some
    edge normal strictly separates the projections.
    """
    for poly in (poly_a, poly_b):
        edges = np.roll(poly, -1, axis=0) - poly
        axes = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        pa = poly_a @ axes.T                       # (na, n_axes)
        pb = poly_b @ axes.T
        if np.any(pa.max(axis=0) < pb.min(axis=0)) or np.any(pb.max(axis=0) < pa.min(axis=0)):
            return False
    return True


def point_in_convex_polygon(point, vertices: np.ndarray) -> bool:
    """Point containment in a convex CCW polygon (boundary counts as inside)."""
    v = np.asarray(vertices, float)
    nxt = np.roll(v, -1, axis=0)
    cr = cross2(nxt[:, 0] - v[:, 0], nxt[:, 1] - v[:, 1],
                point[0] - v[:, 0], point[1] - v[:, 1])
    return bool(np.all(cr >= 0))


def segment_in_box(p1: np.ndarray, p2: np.ndarray, half_len: float, half_wid: float) -> bool:
    """Closed segment vs axis-aligned box [-half_len, half_len] x [-half_wid, half_wid].

    Liang-Barsky clipping; touching counts as intersection.
    """
    d = p2 - p1
    t0, t1 = 0.0, 1.0
    for axis, half in ((0, half_len), (1, half_wid)):
        if d[axis] == 0.0:
            if p1[axis] < -half or p1[axis] > half:
                return False
            continue
        ta = (-half - p1[axis]) / d[axis]
        tb = (half - p1[axis]) / d[axis]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return False
    return True


def line_polygon_interval(base: np.ndarray, direction: np.ndarray,
                          vertices: np.ndarray) -> tuple[float, float] | None:
    """Parameter interval of the line base + t*direction inside a convex CCW polygon.

    Returns (t_lo, t_hi) or None when the line misses the polygon.  Solved by
    clipping against each edge half-plane, so it is exact for convex input.
    """
    v = np.asarray(vertices, float)
    nxt = np.roll(v, -1, axis=0)
    ex, ey = nxt[:, 0] - v[:, 0], nxt[:, 1] - v[:, 1]
    # inside: cross(edge, p - v0) >= 0  ->  a + b * t >= 0
    a = cross2(ex, ey, base[0] - v[:, 0], base[1] - v[:, 1])
    b = cross2(ex, ey, np.full(len(v), direction[0]), np.full(len(v), direction[1]))
    t_lo, t_hi = -np.inf, np.inf
    for ai, bi in zip(a, b):
        if bi == 0.0:
            if ai < 0.0:
                return None
            continue
        t = -ai / bi
        if bi > 0.0:
            t_lo = max(t_lo, t)
        else:
            t_hi = min(t_hi, t)
    if t_lo > t_hi:
        return None
    return float(t_lo), float(t_hi)


def point_segment_distance(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Unsigned distance from a point to a closed segment."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(point - a)))
    t = float(np.clip((point - a) @ ab / denom, 0.0, 1.0))
    foot = a + t * ab
    return float(np.hypot(*(point - foot)))
