"""Procedural closed-loop race track generation, validation and map file I/O.

Tracks are built from random radial control points joined by a periodic cubic
curve, resampled to a uniform-arc-length polyline, given a smoothly varying
corridor width and optionally populated with convex obstacles.  Everything is
a deterministic function of (seed, config).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from . import geom

MAP_FORMAT_VERSION = 1
MAP_SUFFIX = ".track.json"


class TrackGenerationError(RuntimeError):
    """Raised when no valid track geometry is found within the retry budget."""


class ObstaclePlacementError(RuntimeError):
    """Raised when an obstacle cannot be placed without pinching the corridor."""


class MapFormatError(ValueError):
    """Map file is structurally malformed (bad JSON, missing or mistyped field)."""


class MapVersionError(ValueError):
    """Map file declares an unsupported format version."""


class MapInvariantError(ValueError):
    """Map file parsed fine but violates a track invariant."""


@dataclass(frozen=True)
class TrackGenConfig:
    control_point_count: int = 12
    radius_mean: float = 18.0
    radius_jitter: float = 6.0
    width_range: tuple[float, float] = (1.6, 3.4)       # lateral half-width, meters
    resample_spacing: float = 0.25
    obstacle_count_range: tuple[int, int] = (0, 6)
    obstacle_size_range: tuple[float, float] = (0.2, 0.8)
    min_passable_width: float = 0.8                     # vehicle width + margin
    spawn_clearance: float = 2.0                        # obstacle-free arc around spawn
    max_retries: int = 64
    obstacle_max_attempts: int = 200

    def validate(self) -> list[str]:
        errs = []
        if self.control_point_count < 4:
            errs.append("control_point_count: need at least 4")
        if self.radius_mean <= 0:
            errs.append("radius_mean: must be positive")
        if self.radius_jitter < 0 or self.radius_jitter >= self.radius_mean:
            errs.append("radius_jitter: must be in [0, radius_mean)")
        if not (0 < self.width_range[0] <= self.width_range[1]):
            errs.append("width_range: must satisfy 0 < min <= max")
        if self.resample_spacing <= 0:
            errs.append("resample_spacing: must be positive")
        if not (0 <= self.obstacle_count_range[0] <= self.obstacle_count_range[1]):
            errs.append("obstacle_count_range: must satisfy 0 <= min <= max")
        if not (0 < self.obstacle_size_range[0] <= self.obstacle_size_range[1]):
            errs.append("obstacle_size_range: must satisfy 0 < min <= max")
        if self.min_passable_width <= 0:
            errs.append("min_passable_width: must be positive")
        return errs


@dataclass
class Obstacle:
    vertices: np.ndarray                 # (k, 2) convex, counter-clockwise, world frame
    anchor: tuple[float, float] | None = None   # (s, d) used at generation time

    def __eq__(self, other):
        if not isinstance(other, Obstacle):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and self.anchor == other.anchor)


@dataclass
class TrackMap:
    """Closed centerline with widths, obstacles and a spawn pose.

    centerline has shape (N+1, 2) with the first point repeated at the end;
    half_width and cum_s run over the same N+1 points, cum_s[0] = 0 and
    cum_s[-1] = total_length.
    """
    centerline: np.ndarray
    half_width: np.ndarray
    cum_s: np.ndarray
    total_length: float
    obstacles: list[Obstacle]
    spawn: tuple[float, float, float]    # x, y, heading
    seed: int
    resample_spacing: float

    def __eq__(self, other):
        if not isinstance(other, TrackMap):
            return NotImplemented
        return (np.array_equal(self.centerline, other.centerline)
                and np.array_equal(self.half_width, other.half_width)
                and np.array_equal(self.cum_s, other.cum_s)
                and self.total_length == other.total_length
                and self.obstacles == other.obstacles
                and self.spawn == other.spawn
                and self.seed == other.seed
                and self.resample_spacing == other.resample_spacing)


@dataclass
class ValidationIssue:
    check: str
    message: str
    index: int | None = None
    s: float | None = None


def _cumulative_s(points: np.ndarray) -> np.ndarray:
    seg = np.hypot(*(points[1:] - points[:-1]).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def wall_polylines(track: TrackMap) -> tuple[np.ndarray, np.ndarray]:
    """Left and right wall polylines, offset along the vertex normals."""
    left = geom.offset_polyline(track.centerline, track.half_width)
    right = geom.offset_polyline(track.centerline, -track.half_width)
    return left, right


def half_width_at(track: TrackMap, s: float | np.ndarray) -> float | np.ndarray:
    """Corridor half-width at arc position s (wrapped), linear interpolation."""
    s = np.mod(s, track.total_length)
    return np.interp(s, track.cum_s, track.half_width)


def _sample_centerline(rng: np.random.Generator, cfg: TrackGenConfig) -> np.ndarray | None:
    """One attempt at a closed uniform-arc-length centerline, or None if degenerate."""
    n = cfg.control_point_count
    angles = 2.0 * np.pi * np.arange(n) / n
    radii = cfg.radius_mean + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter, size=n)
    ctrl = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    ctrl_closed = np.vstack([ctrl, ctrl[:1]])

    u = np.arange(n + 1, dtype=float)
    spline = CubicSpline(u, ctrl_closed, bc_type="periodic", axis=0)

    dense_u = np.linspace(0.0, n, 40 * n, endpoint=False)
    dense = spline(dense_u)
    dense_closed = np.vstack([dense, dense[:1]])
    chord = np.hypot(*(dense_closed[1:] - dense_closed[:-1]).T)
    cum = np.concatenate([[0.0], np.cumsum(chord)])
    length = cum[-1]
    n_pts = int(round(length / cfg.resample_spacing))
    if n_pts < 8:
        return None

    targets = length * np.arange(n_pts) / n_pts
    u_dense = np.concatenate([dense_u, [float(n)]])
    params = np.interp(targets, cum, u_dense)
    pts = spline(params)
    closed = np.vstack([pts, pts[:1]])
    seg_len = np.hypot(*(closed[1:] - closed[:-1]).T)
    if np.any(seg_len < 1e-9):
        return None
    return closed


def _sample_half_width(rng: np.random.Generator, cfg: TrackGenConfig, n_pts: int) -> np.ndarray:
    """Smooth periodic width profile in width_range over n_pts+1 closed points."""
    w_min, w_max = cfg.width_range
    u = np.arange(n_pts) / n_pts
    amps = rng.uniform(0.2, 1.0, size=3)
    amps /= amps.sum()
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    g = np.zeros(n_pts)
    for k, (a, ph) in enumerate(zip(amps, phases), start=1):
        g += a * np.sin(2.0 * np.pi * k * u + ph)
    profile = w_min + (w_max - w_min) * 0.5 * (1.0 + g)
    return np.concatenate([profile, profile[:1]])


def generate_track(seed: int, config: TrackGenConfig | None = None) -> TrackMap:
    """Generate a validated closed track, deterministic for a fixed (seed, config).

    Retries with derived sub-seeds when the sampled geometry fails validation
    (e.g. the jitter makes a wall self-intersect); raises TrackGenerationError
    when the retry budget is exhausted.
    """
    cfg = config or TrackGenConfig()
    errs = cfg.validate()
    if errs:
        raise ValueError("invalid TrackGenConfig: " + "; ".join(errs))

    for attempt in range(cfg.max_retries):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7261C, attempt)))
        closed = _sample_centerline(rng, cfg)
        if closed is None:
            continue
        half_width = _sample_half_width(rng, cfg, len(closed) - 1)
        cum_s = _cumulative_s(closed)
        tangent0 = closed[1] - closed[0]
        heading = math.atan2(tangent0[1], tangent0[0])
        track = TrackMap(
            centerline=closed,
            half_width=half_width,
            cum_s=cum_s,
            total_length=float(cum_s[-1]),
            obstacles=[],
            spawn=(float(closed[0, 0]), float(closed[0, 1]), heading),
            seed=seed,
            resample_spacing=cfg.resample_spacing,
        )
        if not validate_track(track, cfg):
            return track
    raise TrackGenerationError(
        f"no valid track after {cfg.max_retries} attempts for seed {seed}; "
        "config is likely too aggressive (radius_jitter vs width_range)")


def _obstacle_polygon(rng: np.random.Generator, center: np.ndarray, size: float) -> np.ndarray:
    """Random convex CCW polygon (triangle, quad, or 12-gon disc) of given diameter."""
    kind = rng.integers(0, 3)
    radius = 0.5 * size
    if kind == 2:
        k = 12
        offsets = np.zeros(k)
    else:
        k = 3 if kind == 0 else 4
        # jittered but well-separated angles keep the polygon fat
        offsets = rng.uniform(-0.25, 0.25, size=k) * (2.0 * np.pi / k)
    base = rng.uniform(0.0, 2.0 * np.pi)
    angles = base + 2.0 * np.pi * np.arange(k) / k + offsets
    return center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _lateral_ray(index, s: float) -> tuple[np.ndarray, np.ndarray]:
    from . import frenet
    base = frenet.from_frenet(s, 0.0, index)
    tip = frenet.from_frenet(s, 1.0, index)
    return base, tip - base


def _polygon_occupancy(base, unit, vertices: np.ndarray) -> tuple[float, float] | None:
    """d-interval occupied by a polygon along the lateral ray at arc position s."""
    return geom.line_polygon_interval(base, unit, vertices)


def _disc_occupancy(base, unit, center, radius: float) -> tuple[float, float] | None:
    """d-interval where the lateral ray crosses a disc (|unit| == 1)."""
    rel = np.asarray(center, float) - base
    proj = float(rel @ unit)
    perp_sq = float(rel @ rel) - proj * proj
    under = radius * radius - perp_sq
    if under <= 0.0:
        return None
    half = math.sqrt(under)
    return proj - half, proj + half


def _max_free_gap(hw: float, intervals: list[tuple[float, float]]) -> float:
    """Widest free lateral run in [-hw, hw] once the intervals are blocked."""
    clipped = sorted((max(lo, -hw), min(hi, hw))
                     for lo, hi in intervals if max(lo, -hw) < min(hi, hw))
    if not clipped:
        return 2.0 * hw
    best = clipped[0][0] + hw            # gap against the right wall
    reach = clipped[0][1]
    for lo, hi in clipped[1:]:
        if lo > reach:
            best = max(best, lo - reach)
        reach = max(reach, hi)
    return max(best, hw - reach)         # gap against the left wall


def _passable_at(track: TrackMap, index, s: float, obstacles: list[Obstacle]) -> float:
    """Widest free gap at s with the actual obstacle polygons blocked out."""
    hw = float(half_width_at(track, s))
    base, unit = _lateral_ray(index, s)
    intervals = [iv for ob in obstacles
                 if (iv := _polygon_occupancy(base, unit, ob.vertices)) is not None]
    return _max_free_gap(hw, intervals)


def _passable_at_discs(track: TrackMap, index, s: float,
                       discs: list[tuple[np.ndarray, float]]) -> float:
    """Conservative variant used while placing: obstacles are widened to their
    circumscribed discs so `size` acts as the full blocking diameter."""
    hw = float(half_width_at(track, s))
    base, unit = _lateral_ray(index, s)
    intervals = [iv for c, r in discs
                 if (iv := _disc_occupancy(base, unit, c, r)) is not None]
    return _max_free_gap(hw, intervals)


def _circumdisc(vertices: np.ndarray) -> tuple[np.ndarray, float]:
    center = vertices.mean(axis=0)
    return center, float(np.hypot(*(vertices - center).T).max())


def _obstacle_s_extent(index, vertices: np.ndarray, total_length: float) -> tuple[float, float]:
    from . import frenet
    ss = [frenet.to_frenet(v, index)[0] for v in vertices]
    center = ss[0]
    rel = [math.remainder(s - center, total_length) for s in ss]
    return center + min(rel), center + max(rel)


def place_obstacles(track: TrackMap, seed: int, config: TrackGenConfig | None = None) -> TrackMap:
    """Scatter convex obstacles along the corridor, keeping a passable gap.

    Deterministic per (seed, config).  Candidate placements that pinch the
    corridor below min_passable_width, or sit within spawn_clearance of the
    spawn, are resampled; raises ObstaclePlacementError when a required
    obstacle cannot be placed within the attempt budget.
    """
    from . import frenet

    cfg = config or TrackGenConfig()
    if track.obstacles:
        raise ValueError("track already has obstacles")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0B57)))
    count = int(rng.integers(cfg.obstacle_count_range[0], cfg.obstacle_count_range[1] + 1))
    if count == 0:
        return track

    index = frenet.build_index(track)
    L = track.total_length
    placed: list[Obstacle] = []
    for _ in range(count):
        ok = False
        for _attempt in range(cfg.obstacle_max_attempts):
            s = float(rng.uniform(0.0, L))
            size = float(rng.uniform(*cfg.obstacle_size_range))
            if abs(math.remainder(s, L)) < cfg.spawn_clearance:
                continue
            hw = float(half_width_at(track, s))
            d_max = hw - 0.5 * size
            if d_max <= 0.0:
                continue
            d = float(rng.uniform(-d_max, d_max))
            center = frenet.from_frenet(s, d, index)
            vertices = _obstacle_polygon(rng, center, size)
            candidate = Obstacle(vertices=vertices, anchor=(s, d))

            s_lo, s_hi = _obstacle_s_extent(index, vertices, L)
            scan = np.arange(s_lo - 0.1, s_hi + 0.1, 0.05)
            discs = [_circumdisc(ob.vertices) for ob in placed]
            discs.append((np.asarray(center), 0.5 * size))
            if all(_passable_at_discs(track, index, float(sj), discs)
                   >= cfg.min_passable_width for sj in scan):
                placed.append(candidate)
                ok = True
                break
        if not ok:
            raise ObstaclePlacementError(
                f"could not place obstacle {len(placed) + 1}/{count} within "
                f"{cfg.obstacle_max_attempts} attempts; corridor too narrow for "
                f"size range {cfg.obstacle_size_range} with min_passable_width "
                f"{cfg.min_passable_width}")
    return replace(track, obstacles=placed)


def validate_track(track: TrackMap, config: TrackGenConfig | None = None) -> list[ValidationIssue]:
    """Check every TrackMap invariant; returns one issue per failed check.

    Width-minimum and obstacle-corridor checks need the generating config and
    are skipped when it is not supplied.
    """
    issues: list[ValidationIssue] = []
    pts = track.centerline
    n = len(pts) - 1

    gap = float(np.hypot(*(pts[-1] - pts[0])))
    if gap > 1e-6:
        issues.append(ValidationIssue("closure", f"endpoints {gap:.3e} m apart", index=n))

    ds = np.diff(track.cum_s)
    bad = np.nonzero(ds <= 0)[0]
    if len(bad):
        i = int(bad[0])
        issues.append(ValidationIssue("cum_s", "cum_s not strictly increasing", index=i,
                                      s=float(track.cum_s[i])))
    if track.cum_s[0] != 0.0:
        issues.append(ValidationIssue("cum_s", "cum_s[0] != 0", index=0))
    if not math.isclose(track.cum_s[-1], track.total_length, rel_tol=1e-9, abs_tol=1e-9):
        issues.append(ValidationIssue("cum_s", "cum_s[-1] != total_length", index=n))

    if config is not None:
        low = np.nonzero(track.half_width < config.width_range[0] - 1e-12)[0]
        if len(low):
            i = int(low[0])
            issues.append(ValidationIssue(
                "corridor-width", f"half_width {track.half_width[i]:.3f} below "
                f"minimum {config.width_range[0]:.3f}", index=i, s=float(track.cum_s[i])))

    if not issues:
        left, right = wall_polylines(track)
        center_seg = np.diff(pts, axis=0)
        for name, wall in (("left", left), ("right", right)):
            wall_seg = np.diff(wall, axis=0)
            folded = np.nonzero(np.einsum("ij,ij->i", wall_seg, center_seg) <= 0.0)[0]
            if len(folded):
                i = int(folded[0])
                issues.append(ValidationIssue(
                    "wall-fold",
                    f"{name} wall reverses at segment {i} (half-width exceeds "
                    "the local curvature radius)", index=i, s=float(track.cum_s[i])))
                continue
            hits = geom.closed_polyline_self_intersections(wall)
            if hits:
                i, j = hits[0]
                issues.append(ValidationIssue(
                    "wall-self-intersection",
                    f"{name} wall segments {i} and {j} intersect", index=i,
                    s=float(track.cum_s[i])))

    for oi, ob in enumerate(track.obstacles):
        if len(ob.vertices) < 3 or not geom.convex_polygon_is_ccw(ob.vertices):
            issues.append(ValidationIssue(
                "obstacle-shape", f"obstacle {oi} not convex counter-clockwise", index=oi))

    if config is not None and track.obstacles and not issues:
        from . import frenet
        index = frenet.build_index(track)
        for oi, ob in enumerate(track.obstacles):
            s_lo, s_hi = _obstacle_s_extent(index, ob.vertices, track.total_length)
            for sj in np.arange(s_lo - 0.1, s_hi + 0.1, 0.05):
                gap = _passable_at(track, index, float(sj), track.obstacles)
                if gap < config.min_passable_width - 1e-9:
                    issues.append(ValidationIssue(
                        "passable-width",
                        f"free corridor {gap:.3f} m at s={sj:.2f} below "
                        f"{config.min_passable_width:.3f}", index=oi, s=float(sj)))
                    break
    return issues


def save_map(track: TrackMap, path) -> None:
    """Write a track to a .track.json file with full float round-trip precision."""
    doc = {
        "version": MAP_FORMAT_VERSION,
        "seed": track.seed,
        "resample_spacing": track.resample_spacing,
        "total_length": track.total_length,
        "centerline": [[float(x), float(y)] for x, y in track.centerline],
        "half_width": [float(w) for w in track.half_width],
        "obstacles": [
            {"vertices": [[float(x), float(y)] for x, y in ob.vertices],
             **({"anchor": [float(ob.anchor[0]), float(ob.anchor[1])]} if ob.anchor else {})}
            for ob in track.obstacles
        ],
        "spawn": {"x": track.spawn[0], "y": track.spawn[1], "heading": track.spawn[2]},
    }
    with open(path, "w") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


def _require(doc: dict, key: str, kind, where: str = "map"):
    if key not in doc:
        raise MapFormatError(f"missing field '{key}' in {where}")
    val = doc[key]
    if kind is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, kind):
        raise MapFormatError(f"field '{key}' in {where} has wrong type "
                             f"({type(val).__name__})")
    return val


def load_map(path) -> TrackMap:
    """Read a .track.json file; raises MapFormatError / MapVersionError /
    MapInvariantError with the offending field or index."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise MapFormatError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MapFormatError("top-level value must be an object")

    version = _require(doc, "version", int)
    if version != MAP_FORMAT_VERSION:
        raise MapVersionError(f"unsupported map version {version}, "
                              f"expected {MAP_FORMAT_VERSION}")
    seed = _require(doc, "seed", int)
    spacing = _require(doc, "resample_spacing", float)
    total_length = _require(doc, "total_length", float)
    centerline = np.asarray(_require(doc, "centerline", list), dtype=float)
    half_width = np.asarray(_require(doc, "half_width", list), dtype=float)
    if centerline.ndim != 2 or centerline.shape[1] != 2:
        raise MapFormatError("field 'centerline' must be a list of [x, y] pairs")
    if len(half_width) != len(centerline):
        raise MapFormatError("field 'half_width' length must match 'centerline'")
    spawn_doc = _require(doc, "spawn", dict)
    spawn = (_require(spawn_doc, "x", float, "spawn"),
             _require(spawn_doc, "y", float, "spawn"),
             _require(spawn_doc, "heading", float, "spawn"))
    obstacles = []
    for oi, ob in enumerate(_require(doc, "obstacles", list)):
        if not isinstance(ob, dict):
            raise MapFormatError(f"obstacle {oi} must be an object")
        verts = np.asarray(_require(ob, "vertices", list, f"obstacle {oi}"), dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise MapFormatError(f"obstacle {oi} 'vertices' must be >= 3 [x, y] pairs")
        anchor = tuple(ob["anchor"]) if "anchor" in ob else None
        obstacles.append(Obstacle(vertices=verts, anchor=anchor))

    cum_s = _cumulative_s(centerline)
    if np.any(np.diff(cum_s) <= 0):
        i = int(np.nonzero(np.diff(cum_s) <= 0)[0][0])
        raise MapInvariantError(f"cum_s not strictly increasing at index {i} "
                                "(duplicate consecutive centerline points)")
    if not math.isclose(cum_s[-1], total_length, rel_tol=1e-9, abs_tol=1e-6):
        raise MapInvariantError(
            f"stored total_length {total_length} disagrees with centerline "
            f"arc length {cum_s[-1]}")
    if float(np.hypot(*(centerline[-1] - centerline[0]))) > 1e-6:
        raise MapInvariantError("centerline is not closed")

    return TrackMap(centerline=centerline, half_width=half_width, cum_s=cum_s,
                    total_length=float(cum_s[-1]), obstacles=obstacles,
                    spawn=spawn, seed=seed, resample_spacing=spacing)
