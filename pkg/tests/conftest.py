import numpy as np
import pytest

from trackforge import trackgen
from trackforge.trackgen import TrackGenConfig, TrackMap


def make_circle_track(radius: float = 20.0, spacing: float = 0.25,
                      half_width: float = 2.0) -> TrackMap:
    """Analytic circular track, counter-clockwise from (radius, 0)."""
    n = int(round(2 * np.pi * radius / spacing))
    angles = 2 * np.pi * np.arange(n) / n
    pts = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    closed = np.vstack([pts, pts[:1]])
    seg = np.hypot(*(closed[1:] - closed[:-1]).T)
    cum_s = np.concatenate([[0.0], np.cumsum(seg)])
    return TrackMap(centerline=closed,
                    half_width=np.full(n + 1, half_width),
                    cum_s=cum_s, total_length=float(cum_s[-1]), obstacles=[],
                    spawn=(float(closed[0, 0]), float(closed[0, 1]), np.pi / 2),
                    seed=0, resample_spacing=spacing)


def make_straight_corridor(length: float = 200.0, half_width: float = 2.0,
                           spacing: float = 0.25) -> TrackMap:
    """Stadium track: two long straights joined by semicircles; the spawn
    straight is effectively an infinite corridor for short tests."""
    r = 8.0
    seg_pts = []
    n_straight = int(length / spacing)
    for i in range(n_straight):
        seg_pts.append((i * spacing, 0.0))
    n_arc = int(np.pi * r / spacing)
    cx, cy = (n_straight - 1) * spacing, r
    for i in range(1, n_arc + 1):
        a = -np.pi / 2 + np.pi * i / n_arc
        seg_pts.append((cx + r * np.cos(a), cy + r * np.sin(a)))
    for i in range(1, n_straight):
        seg_pts.append((cx - i * spacing, 2 * r))
    cx2 = 0.0
    for i in range(1, n_arc):
        a = np.pi / 2 + np.pi * i / n_arc
        seg_pts.append((cx2 + r * np.cos(a), cy + r * np.sin(a)))
    pts = np.asarray(seg_pts)
    closed = np.vstack([pts, pts[:1]])
    seg = np.hypot(*(closed[1:] - closed[:-1]).T)
    cum_s = np.concatenate([[0.0], np.cumsum(seg)])
    n = len(pts)
    return TrackMap(centerline=closed, half_width=np.full(n + 1, half_width),
                    cum_s=cum_s, total_length=float(cum_s[-1]), obstacles=[],
                    spawn=(0.0, 0.0, 0.0), seed=0, resample_spacing=spacing)


@pytest.fixture(scope="session")
def default_track() -> TrackMap:
    return trackgen.generate_track(42, TrackGenConfig())


@pytest.fixture(scope="session")
def obstacle_track() -> TrackMap:
    cfg = TrackGenConfig(obstacle_count_range=(3, 5))
    return trackgen.place_obstacles(trackgen.generate_track(17, cfg), 17, cfg)


@pytest.fixture(scope="session")
def track_pool_small() -> list[TrackMap]:
    cfg = TrackGenConfig()
    return [trackgen.generate_track(s, cfg) for s in (5, 6)]


@pytest.fixture
def circle_track() -> TrackMap:
    return make_circle_track()


@pytest.fixture
def corridor_track() -> TrackMap:
    return make_straight_corridor()
