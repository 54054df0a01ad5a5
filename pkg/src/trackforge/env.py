"""Episode assembly: observations with frame stacking, reward, collision and
lap detection, and domain-randomized resets."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from . import frenet, geom, sensors
from .dynamics import Action, VehicleConfig, VehicleState, denormalize_action, \
    footprint_center, step_dynamics
from .frenet import FrenetPose
from .sensors import LidarConfig, LidarScanner
from .trackgen import TrackMap, wall_polylines


class EpisodeDoneError(RuntimeError):
    """step() called before reset() or after the episode ended."""


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 3000
    stack_depth: int = 4
    c_vs: float = 1.0
    c_vd: float = 0.01
    c_d: float = 0.02
    c_steer: float = 0.1
    collision_penalty: float = -1000.0

    def validate(self) -> list[str]:
        errs = []
        if self.max_steps <= 0:
            errs.append("max_steps: must be positive")
        if self.stack_depth < 1:
            errs.append("stack_depth: must be >= 1")
        return errs


@dataclass
class EpisodeInfo:
    frenet: FrenetPose
    collision: bool
    lap_complete: bool
    timeout: bool


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: EpisodeInfo


def observation_dim(beam_count: int, stack_depth: int) -> int:
    return stack_depth * (beam_count + 3)


def compute_reward(f: FrenetPose, action: Action, collision: bool,
                   cfg: EpisodeConfig) -> float:
    """Per-step reward: forward progress minus lateral motion, offset and
    steering effort; a collision overrides everything with the penalty."""
    if collision:
        return cfg.collision_penalty
    return (cfg.c_vs * f.v_s
            - cfg.c_vd * abs(f.v_d)
            - cfg.c_d * abs(f.d)
            - cfg.c_steer * abs(action.steer_cmd))


def wrap_progress_delta(s_new: float, s_old: float, total_length: float) -> float:
    """Signed arc step from s_old to s_new, taking the shortest way around."""
    return math.remainder(s_new - s_old, total_length)


def check_lap_complete(s_history, total_length: float) -> bool:
    """True once the cumulative shortest-wrap progress over the s samples
    reaches a full loop; backward excursions subtract, so reversing across
    the start line cannot fake a lap."""
    s = np.asarray(s_history, dtype=float)
    if len(s) < 2:
        return False
    deltas = np.remainder(np.diff(s) + 0.5 * total_length, total_length) - 0.5 * total_length
    return bool(np.cumsum(deltas).max(initial=0.0) >= total_length)


def rect_intersects_polygon(center, heading: float, length: float, width: float,
                            vertices: np.ndarray) -> bool:
    """Oriented-rectangle vs convex-polygon overlap (closed sets)."""
    rect = geom.rect_corners(center[0], center[1], heading, length, width)
    return geom.convex_polygons_overlap(rect, np.asarray(vertices, float))


class CollisionChecker:
    """Footprint-vs-track test with a KD-tree prefilter over wall segments."""

    def __init__(self, track: TrackMap, vehicle: VehicleConfig):
        self.vehicle = vehicle
        left, right = wall_polylines(track)
        self.seg_a = np.vstack([left[:-1], right[:-1]])
        self.seg_b = np.vstack([left[1:], right[1:]])
        mids = 0.5 * (self.seg_a + self.seg_b)
        self._half_len = 0.5 * np.hypot(*(self.seg_b - self.seg_a).T).max()
        self._tree = cKDTree(mids)
        self._reach = 0.5 * math.hypot(vehicle.length, vehicle.width)
        self.obstacles = [np.asarray(ob.vertices, float) for ob in track.obstacles]
        self._ob_centers = [ob.mean(axis=0) for ob in self.obstacles]
        self._ob_radius = [float(np.hypot(*(ob - c).T).max())
                           for ob, c in zip(self.obstacles, self._ob_centers)]

    def check(self, state: VehicleState) -> bool:
        cx, cy = footprint_center(state, self.vehicle)
        cand = self._tree.query_ball_point([cx, cy],
                                           self._reach + self._half_len + 1e-9)
        if cand:
            cos_h, sin_h = math.cos(state.heading), math.sin(state.heading)
            rot = np.array([[cos_h, sin_h], [-sin_h, cos_h]])   # world -> body
            hl, hw = 0.5 * self.vehicle.length, 0.5 * self.vehicle.width
            for k in cand:
                a = rot @ (self.seg_a[k] - [cx, cy])
                b = rot @ (self.seg_b[k] - [cx, cy])
                if geom.segment_in_box(a, b, hl, hw):
                    return True
        for poly, pc, pr in zip(self.obstacles, self._ob_centers, self._ob_radius):
            if math.hypot(pc[0] - cx, pc[1] - cy) > pr + self._reach:
                continue
            if rect_intersects_polygon((cx, cy), state.heading,
                                       self.vehicle.length, self.vehicle.width, poly):
                return True
        return False


def check_collision(state: VehicleState, track: TrackMap,
                    vehicle: VehicleConfig | None = None) -> bool:
    """True iff the vehicle footprint touches a wall polyline or an obstacle."""
    return CollisionChecker(track, vehicle or VehicleConfig()).check(state)


class RacingEnv:
    """One vehicle on one track; mutable episode state, single-threaded."""

    def __init__(self, vehicle: VehicleConfig | None = None,
                 lidar: LidarConfig | None = None,
                 episode: EpisodeConfig | None = None):
        self.vehicle = vehicle or VehicleConfig()
        self.lidar = lidar or LidarConfig()
        self.episode = episode or EpisodeConfig()
        self._substep_cfg = replace(self.vehicle, control_dt=self.vehicle.physics_dt)
        self.track: TrackMap | None = None
        self._scanner: LidarScanner | None = None
        self._collider: CollisionChecker | None = None
        self._index: frenet.CenterlineIndex | None = None
        self._track_cache: dict[int, tuple] = {}
        self._done = True
        self._started = False

    @property
    def observation_dim(self) -> int:
        return observation_dim(self.lidar.beam_count, self.episode.stack_depth)

    def _attach_track(self, track: TrackMap) -> None:
        if track is self.track:
            return
        cached = self._track_cache.get(id(track))
        if cached is None or cached[0] is not track:
            cached = (track,
                      LidarScanner(track, self.lidar),
                      CollisionChecker(track, self.vehicle),
                      frenet.build_index(track))
            if len(self._track_cache) < 64:
                self._track_cache[id(track)] = cached
        self.track = track
        _, self._scanner, self._collider, self._index = cached

    def reset(self, seed: int, track: TrackMap | None = None) -> np.ndarray:
        if track is None:
            if self.track is None:
                raise ValueError("first reset needs a track")
        else:
            self._attach_track(track)

        ss = np.random.SeedSequence((int(seed), 0xEC0))
        fx_seed, noise_seed = ss.spawn(2)
        self._fx = sensors.sample_effects(fx_seed, self.lidar)
        self._noise_rng = np.random.default_rng(noise_seed)

        x, y, heading = self.track.spawn
        self.state = VehicleState(x=x, y=y, heading=heading)
        self._prev_action = Action(-1.0, 0.0)
        self._steps = 0
        self._progress = 0.0
        s0, _ = frenet.to_frenet((x, y), self._index)
        self._s_prev = s0
        self._done = False
        self._started = True

        scan = self._scanner.scan(self.state)
        scan_fx, speed_fx = sensors.apply_sensor_effects(
            scan, self.state.speed, self._fx, self._noise_rng, self.lidar)
        frame = self._frame(scan_fx, speed_fx, self._prev_action)
        self._frames = [frame.copy() for _ in range(self.episode.stack_depth)]
        return self._observation()

    def _frame(self, scan: np.ndarray, speed: float, action: Action) -> np.ndarray:
        lidar_norm = sensors.normalize_scan(scan, self.lidar)
        speed_norm = min(max(speed / self.vehicle.speed_range[1], 0.0), 1.0)
        return np.concatenate([lidar_norm, [speed_norm, action.speed_cmd, action.steer_cmd]])

    def _observation(self) -> np.ndarray:
        return np.concatenate(self._frames)

    def step(self, action: Action) -> StepResult:
        if self._done or not self._started:
            raise EpisodeDoneError("reset the environment before stepping")

        act = action.clamped()
        targets = denormalize_action(act, self.vehicle)
        collision = False
        state = self.state
        for _ in range(self.vehicle.substeps):
            state = step_dynamics(state, targets, self._substep_cfg)
            if self._collider.check(state):
                collision = True
                break
        self.state = state
        self._steps += 1

        scan = self._scanner.scan(state)
        scan_fx, speed_fx = sensors.apply_sensor_effects(
            scan, state.speed, self._fx, self._noise_rng, self.lidar)
        self._frames.pop(0)
        self._frames.append(self._frame(scan_fx, speed_fx, act))
        self._prev_action = act

        s, d = frenet.to_frenet((state.x, state.y), self._index)
        v_s, v_d = frenet.frenet_velocity(state, self._index)
        pose = FrenetPose(s=s, d=d, v_s=v_s, v_d=v_d)
        self._progress += wrap_progress_delta(s, self._s_prev, self.track.total_length)
        self._s_prev = s

        lap = (not collision) and self._progress >= self.track.total_length
        timeout = (not collision) and (not lap) and self._steps >= self.episode.max_steps
        done = collision or lap or timeout
        reward = compute_reward(pose, act, collision, self.episode)
        self._done = done
        return StepResult(observation=self._observation(), reward=reward, done=done,
                          info=EpisodeInfo(frenet=pose, collision=collision,
                                           lap_complete=lap, timeout=timeout))
