"""Arc-length indexing of the centerline and Cartesian <-> track-frame conversion.

The track frame follows the usual convention: s is arc length along the
centerline in the travel direction, d is the signed lateral offset, positive
to the LEFT of travel.  Lateral rays use normals blended between the polyline
vertices, which makes (s, d) -> point invertible inside the corridor and keeps
round trips exact to solver precision rather than O(d * spacing / radius) as a
plain nearest-segment projection would be.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial import cKDTree

from . import geom

if TYPE_CHECKING:
    from .dynamics import VehicleState
    from .trackgen import TrackMap


class DegenerateSegmentError(ValueError):
    """Two consecutive centerline points coincide."""


class OutOfCorridorError(ValueError):
    """Query point is farther from every centerline segment than the cutoff."""


@dataclass
class FrenetPose:
    s: float
    d: float
    v_s: float = 0.0
    v_d: float = 0.0


@dataclass
class CenterlineIndex:
    """Immutable lookup structure over the closed centerline polyline."""
    seg_start: np.ndarray        # (N, 2)
    seg_tangent: np.ndarray      # (N, 2) unit
    seg_normal: np.ndarray       # (N, 2) unit, tangent rotated +90 degrees
    seg_len: np.ndarray          # (N,)
    cum_s: np.ndarray            # (N+1,) arc length at each vertex
    vertex_normal: np.ndarray    # (N+1, 2) unit blended normals
    total_length: float
    cutoff: float
    _tree: cKDTree
    _max_seg_len: float


def build_index(track: "TrackMap", cutoff: float | None = None) -> CenterlineIndex:
    """Precompute segment frames and a midpoint KD-tree for nearest queries.

    cutoff defaults to 5x the maximum half-width; queries farther than that
    from every segment raise OutOfCorridorError.
    """
    pts = np.asarray(track.centerline, dtype=float)
    seg = pts[1:] - pts[:-1]
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    bad = np.nonzero(lengths < 1e-12)[0]
    if len(bad):
        raise DegenerateSegmentError(
            f"centerline points {int(bad[0])} and {int(bad[0]) + 1} coincide")
    tangents = seg / lengths[:, None]
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    if cutoff is None:
        cutoff = 5.0 * float(np.max(track.half_width))
    mids = pts[:-1] + 0.5 * seg
    return CenterlineIndex(
        seg_start=pts[:-1],
        seg_tangent=tangents,
        seg_normal=normals,
        seg_len=lengths,
        cum_s=np.asarray(track.cum_s, dtype=float),
        vertex_normal=geom.vertex_normals(pts),
        total_length=float(track.cum_s[-1]),
        cutoff=float(cutoff),
        _tree=cKDTree(mids),
        _max_seg_len=float(lengths.max()),
    )


def _candidate_segments(index: CenterlineIndex, point: np.ndarray) -> np.ndarray:
    r0, _ = index._tree.query(point)
    if r0 - 0.5 * index._max_seg_len > index.cutoff:
        raise OutOfCorridorError(
            f"point {point.tolist()} is more than {index.cutoff:.2f} m from the track")
    radius = r0 + index._max_seg_len + 1e-9
    cand = index._tree.query_ball_point(point, radius)
    n = len(index.seg_len)
    # include neighbors so joint roots are never missed
    expanded = set()
    for k in cand:
        expanded.update(((k - 1) % n, k, (k + 1) % n))
    return np.fromiter(expanded, dtype=int)


def _project(index: CenterlineIndex, point: np.ndarray) -> tuple[int, float, float]:
    """Find (segment, fraction w in [0,1], signed d) so that
    point == start + w*seg + d*blended_normal(w); smallest |d| wins, ties by s."""
    point = np.asarray(point, dtype=float)
    cand = _candidate_segments(index, point)

    best: tuple[float, float, int, float] | None = None   # (|d|, s, k, w) keyed tuple
    L = index.total_length
    for k in cand:
        a = index.seg_start[k]
        e = index.seg_tangent[k] * index.seg_len[k]
        m0 = index.vertex_normal[k]
        m1 = index.vertex_normal[k + 1]
        q = point - a
        dm = m1 - m0
        # residual q - w*e must be parallel to (1-w)*m0 + w*m1:
        # cross(m(w), q - w*e) = c0 + c1*w + c2*w^2 = 0
        c0 = geom.cross2(m0[0], m0[1], q[0], q[1])
        c1 = geom.cross2(dm[0], dm[1], q[0], q[1]) - geom.cross2(m0[0], m0[1], e[0], e[1])
        c2 = -geom.cross2(dm[0], dm[1], e[0], e[1])
        roots = _quadratic_roots(c2, c1, c0)
        for w in roots:
            if w < -1e-9 or w > 1.0 + 1e-9:
                continue
            w = min(max(w, 0.0), 1.0)
            m = (1.0 - w) * m0 + w * m1
            m_norm = math.hypot(m[0], m[1])
            if m_norm < 1e-12:
                continue
            resid = q - w * e
            d = (resid[0] * m[0] + resid[1] * m[1]) / m_norm
            s = (index.cum_s[k] + w * index.seg_len[k]) % L
            key = (abs(d), s, k, w)
            if best is None or key[:2] < best[:2]:
                best = key

    if best is None:
        # beyond the blended-normal chart (e.g. far outside); fall back to the
        # classic clamped projection for the distance test
        k, w, dist = _nearest_clamped(index, point, cand)
        if dist > index.cutoff:
            raise OutOfCorridorError(
                f"point {point.tolist()} is more than {index.cutoff:.2f} m from the track")
        return k, w, dist if _side(index, point, k, w) >= 0 else -dist
    if best[0] > index.cutoff:
        raise OutOfCorridorError(
            f"point {point.tolist()} is more than {index.cutoff:.2f} m from the track")
    _, _, k, w = best
    m = (1.0 - w) * index.vertex_normal[k] + w * index.vertex_normal[k + 1]
    m_norm = math.hypot(m[0], m[1])
    resid = point - index.seg_start[k] - w * index.seg_tangent[k] * index.seg_len[k]
    d = (resid[0] * m[0] + resid[1] * m[1]) / m_norm
    return int(k), float(w), float(d)


def _quadratic_roots(a: float, b: float, c: float) -> list[float]:
    """Real roots of a*w^2 + b*w + c = 0, numerically stable near a ~ 0."""
    if abs(a) < 1e-14 * max(abs(b), abs(c), 1.0):
        if b == 0.0:
            return []
        return [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b)) if b != 0.0 else 0.5 * sq
    roots = []
    if q != 0.0:
        roots.append(q / a)
        roots.append(c / q)
    else:
        roots.append(0.0)
        if a != 0.0:
            roots.append(-b / a)
    return roots


def _nearest_clamped(index: CenterlineIndex, point: np.ndarray,
                     cand: np.ndarray) -> tuple[int, float, float]:
    best = None
    for k in cand:
        a = index.seg_start[k]
        t = (point - a) @ index.seg_tangent[k]
        t = min(max(t, 0.0), index.seg_len[k])
        foot = a + t * index.seg_tangent[k]
        dist = math.hypot(*(point - foot))
        s = (index.cum_s[k] + t) % index.total_length
        key = (dist, s, k, t / index.seg_len[k])
        if best is None or key[:2] < best[:2]:
            best = key
    return int(best[2]), float(best[3]), float(best[0])


def _side(index: CenterlineIndex, point: np.ndarray, k: int, w: float) -> float:
    a = index.seg_start[k]
    return float((point - a) @ index.seg_normal[k])


def _frame_at(index: CenterlineIndex, k: int, w: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (tangent, left-normal) of the blended frame at (segment, w)."""
    m = (1.0 - w) * index.vertex_normal[k] + w * index.vertex_normal[k + 1]
    m = m / math.hypot(m[0], m[1])
    t = np.array([m[1], -m[0]])
    return t, m


def to_frenet(point, index: CenterlineIndex) -> tuple[float, float]:
    """Project a world point to (s, d); s in [0, L), d positive left of travel."""
    k, w, d = _project(index, np.asarray(point, dtype=float))
    s = (index.cum_s[k] + w * index.seg_len[k]) % index.total_length
    return float(s), float(d)


def from_frenet(s: float, d: float, index: CenterlineIndex) -> np.ndarray:
    """World point at arc position s (wrapped to [0, L)) and lateral offset d."""
    L = index.total_length
    s = float(np.mod(s, L))
    k = int(np.searchsorted(index.cum_s, s, side="right") - 1)
    k = min(max(k, 0), len(index.seg_len) - 1)
    w = (s - index.cum_s[k]) / index.seg_len[k]
    base = index.seg_start[k] + w * index.seg_tangent[k] * index.seg_len[k]
    _, m = _frame_at(index, k, w)
    return base + d * m


def frenet_velocity(state: "VehicleState", index: CenterlineIndex) -> tuple[float, float]:
    """Longitudinal / lateral velocity components at the vehicle's projection."""
    point = np.array([state.x, state.y])
    k, w, _ = _project(index, point)
    t, m = _frame_at(index, k, w)
    vel = np.array([state.speed * math.cos(state.heading),
                    state.speed * math.sin(state.heading)])
    return float(vel @ t), float(vel @ m)
