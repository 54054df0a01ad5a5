"""2D lidar raycasting, sensor-noise/delay effects, and scan normalization.

A scan casts beam_count rays spread over the field of view against the track
walls and obstacle edges; the per-episode effect state replays scans with a
fixed delay and adds Gaussian noise, mimicking the real sensor pipeline.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geom
from .dynamics import VehicleState
from .trackgen import TrackMap, wall_polylines

Scan = np.ndarray   # (beam_count,) ranges in meters, each in [0, max_range]


@dataclass(frozen=True)
class LidarConfig:
    beam_count: int = 2155
    fov: float = 4.712                     # radians, ~270 degrees
    max_range: float = 10.0
    mount_offset: float = 0.15             # meters ahead of the rear axle
    noise_sigma_range: tuple[float, float] = (0.0, 0.03)
    delay_steps_range: tuple[int, int] = (0, 2)
    speed_noise_scale: float = 0.5         # speed sigma = scan sigma * this

    def validate(self) -> list[str]:
        errs = []
        if self.beam_count < 1:
            errs.append("beam_count: must be >= 1")
        if not (0.0 < self.fov <= 2.0 * math.pi):
            errs.append("fov: must be in (0, 2*pi]")
        if self.max_range <= 0:
            errs.append("max_range: must be positive")
        if not (0.0 <= self.noise_sigma_range[0] <= self.noise_sigma_range[1]):
            errs.append("noise_sigma_range: must satisfy 0 <= min <= max")
        if not (0 <= self.delay_steps_range[0] <= self.delay_steps_range[1]):
            errs.append("delay_steps_range: must satisfy 0 <= min <= max")
        return errs


@dataclass
class SensorEffectState:
    sigma: float
    delay: int
    buffer: deque = field(default_factory=deque)

    def __post_init__(self):
        self.buffer = deque(self.buffer, maxlen=self.delay + 1)


def beam_angles(heading: float, config: LidarConfig) -> np.ndarray:
    """Strictly increasing beam angles, symmetric about the heading."""
    b = config.beam_count
    if b == 1:
        return np.array([heading])
    return heading - 0.5 * config.fov + config.fov * np.arange(b) / (b - 1)


def mount_point(state: VehicleState, config: LidarConfig) -> np.ndarray:
    return np.array([state.x + config.mount_offset * math.cos(state.heading),
                     state.y + config.mount_offset * math.sin(state.heading)])


def _collect_segments(track: TrackMap) -> tuple[np.ndarray, np.ndarray]:
    left, right = wall_polylines(track)
    starts = [left[:-1], right[:-1]]
    ends = [left[1:], right[1:]]
    for ob in track.obstacles:
        starts.append(ob.vertices)
        ends.append(np.roll(ob.vertices, -1, axis=0))
    return np.vstack(starts), np.vstack(ends)


class LidarScanner:
    """Production raycaster: prefilters segments around the mount point with a
    KD-tree, then intersects beams against the candidates in vectorized chunks."""

    def __init__(self, track: TrackMap, config: LidarConfig):
        self.config = config
        self.seg_a, self.seg_b = _collect_segments(track)
        mids = 0.5 * (self.seg_a + self.seg_b)
        self._half_len = 0.5 * np.hypot(*(self.seg_b - self.seg_a).T).max()
        self._tree = cKDTree(mids)

    def scan(self, state: VehicleState) -> Scan:
        origin = mount_point(state, self.config)
        angles = beam_angles(state.heading, self.config)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        radius = self.config.max_range + self._half_len + 1e-9
        cand = self._tree.query_ball_point(origin, radius)
        if not cand:
            return np.full(self.config.beam_count, self.config.max_range)
        cand = np.asarray(cand, dtype=int)
        return geom.ray_hits(origin, dirs, self.seg_a[cand], self.seg_b[cand],
                             self.config.max_range)


def scan_lidar(state: VehicleState, track: TrackMap, config: LidarConfig) -> Scan:
    """One-off scan; use LidarScanner directly in loops to reuse the prefilter."""
    return LidarScanner(track, config).scan(state)


def normalize_scan(scan: Scan, config: LidarConfig) -> np.ndarray:
    """Clip to max_range and scale to [0, 1]."""
    return np.minimum(scan, config.max_range) / config.max_range


def sample_effects(seed, config: LidarConfig) -> SensorEffectState:
    """Draw the per-episode noise sigma and delay; deterministic per seed."""
    rng = np.random.default_rng(seed)
    sigma = float(rng.uniform(*config.noise_sigma_range))
    delay = int(rng.integers(config.delay_steps_range[0], config.delay_steps_range[1] + 1))
    return SensorEffectState(sigma=sigma, delay=delay)


def apply_sensor_effects(scan: Scan, speed: float, fx: SensorEffectState,
                         rng: np.random.Generator, config: LidarConfig,
                         ) -> tuple[Scan, float]:
    """Push the clean frame and return the delayed, noise-corrupted one.

    During warm-up (fewer frames buffered than the delay) the oldest buffered
    frame is returned rather than fabricating data.
    """
    fx.buffer.append((np.array(scan, copy=True), float(speed)))
    old_scan, old_speed = fx.buffer[0]
    if fx.sigma > 0.0:
        noisy = old_scan + rng.normal(0.0, fx.sigma, size=old_scan.shape)
        noisy = np.clip(noisy, 0.0, config.max_range)
        speed_out = max(0.0, old_speed + rng.normal(0.0, fx.sigma * config.speed_noise_scale))
    else:
        noisy = np.array(old_scan, copy=True)
        speed_out = old_speed
    return noisy, speed_out
