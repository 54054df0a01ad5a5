import math

import numpy as np
import pytest

from trackforge import frenet, trackgen
from trackforge.dynamics import Action, VehicleConfig, VehicleState
from trackforge.env import (CollisionChecker, EpisodeConfig, EpisodeDoneError,
                            RacingEnv, check_collision, check_lap_complete,
                            compute_reward, observation_dim,
                            rect_intersects_polygon, wrap_progress_delta)
from trackforge.frenet import FrenetPose
from trackforge.sensors import LidarConfig

from conftest import make_straight_corridor

LIDAR36 = LidarConfig(beam_count=36)


# --- reward ------------------------------------------------------------------

def test_reward_hand_case():
    f = FrenetPose(s=0.0, d=0.1, v_s=2.0, v_d=0.5)
    r = compute_reward(f, Action(0.0, 0.3), collision=False, cfg=EpisodeConfig())
    assert r == pytest.approx(2.0 - 0.005 - 0.002 - 0.03, abs=1e-12)
    assert r == pytest.approx(1.963, abs=1e-12)


def test_reward_zero_inputs():
    f = FrenetPose(s=0.0, d=0.0, v_s=0.0, v_d=0.0)
    assert compute_reward(f, Action(0.0, 0.0), False, EpisodeConfig()) == 0.0


def test_reward_collision_overrides():
    f = FrenetPose(s=3.0, d=0.5, v_s=4.0, v_d=0.1)
    assert compute_reward(f, Action(1.0, 1.0), True, EpisodeConfig()) == -1000.0


def test_reward_matches_independent_formula():
    # independently coded one-liner from the formula
    rng = np.random.default_rng(0)
    cfg = EpisodeConfig()
    for _ in range(200):
        v_s, v_d, d = rng.uniform(-6, 6, size=3)
        steer = float(rng.uniform(-1, 1))
        f = FrenetPose(s=1.0, d=d, v_s=v_s, v_d=v_d)
        got = compute_reward(f, Action(0.0, steer), False, cfg)
        want = 1.0 * v_s - 0.01 * abs(v_d) - 0.02 * abs(d) - 0.1 * abs(steer)
        assert got == pytest.approx(want, abs=1e-12)


# --- collision ---------------------------------------------------------------

def sat_overlap_oracle(rect_pts, poly_pts):
    """Brute-force separating axis test over both shapes' edge normals."""
    def axes(pts):
        out = []
        n = len(pts)
        for i in range(n):
            ex = pts[(i + 1) % n][0] - pts[i][0]
            ey = pts[(i + 1) % n][1] - pts[i][1]
            out.append((-ey, ex))
        return out

    for ax, ay in axes(rect_pts) + axes(poly_pts):
        pa = [ax * x + ay * y for x, y in rect_pts]
        pb = [ax * x + ay * y for x, y in poly_pts]
        if max(pa) < min(pb) or max(pb) < min(pa):
            return False
    return True


def rect_pts(cx, cy, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2, width / 2
    return [(cx + c * dx - s * dy, cy + s * dx + c * dy)
            for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))]


def test_rect_polygon_oracle_agreement():
    rng = np.random.default_rng(12)
    disagreements = 0
    for _ in range(2000):
        cx, cy = rng.uniform(-2, 2, size=2)
        heading = rng.uniform(-math.pi, math.pi)
        length, width = rng.uniform(0.2, 1.0, size=2)
        k = int(rng.integers(3, 7))
        angles = np.sort(rng.uniform(0, 2 * math.pi, size=k))
        radius = rng.uniform(0.2, 1.5)
        center = rng.uniform(-2, 2, size=2)
        poly = center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        got = rect_intersects_polygon((cx, cy), heading, length, width, poly)
        want = sat_overlap_oracle(rect_pts(cx, cy, heading, length, width),
                                  [tuple(p) for p in poly])
        disagreements += got != want
    assert disagreements == 0


def test_corner_grazing_vertex_counts():
    # rectangle corner at (1, 0) exactly touching a triangle vertex at (1, 0)
    poly = np.array([[1.0, 0.0], [2.0, -0.5], [2.0, 0.5]])
    assert rect_intersects_polygon((0.5, 0.0), 0.0, 1.0, 0.6, poly)
    # moved away by 1e-9: no contact
    poly_far = poly + np.array([1e-9, 0.0])
    assert not rect_intersects_polygon((0.5, 0.0), 0.0, 1.0, 0.6, poly_far)


def test_vehicle_on_centerline_no_collision(corridor_track):
    state = VehicleState(x=50.0, y=0.0, heading=0.0)
    assert not check_collision(state, corridor_track)


def test_vehicle_straddling_wall_collides(corridor_track):
    hw = corridor_track.half_width[0]
    state = VehicleState(x=50.0, y=float(hw), heading=0.0)
    assert check_collision(state, corridor_track)


def test_wall_segment_inside_footprint_detected(corridor_track):
    # heading perpendicular: footprint spans the wall line even though no
    # endpoint of any single segment is beyond it
    hw = corridor_track.half_width[0]
    state = VehicleState(x=50.0, y=float(hw), heading=math.pi / 2)
    assert check_collision(state, corridor_track)


def test_obstacle_collision(obstacle_track):
    ob = obstacle_track.obstacles[0]
    cx, cy = ob.vertices.mean(axis=0)
    vehicle = VehicleConfig()
    # place the footprint center on the obstacle centroid
    state = VehicleState(x=cx - 0.5 * vehicle.wheelbase, y=cy, heading=0.0)
    assert check_collision(state, obstacle_track, vehicle)


# --- lap detection -----------------------------------------------------------

def test_monotone_sweep_completes():
    s = np.linspace(0, 99.9, 500) % 100.0
    assert not check_lap_complete(s, 100.0)
    s = np.concatenate([s, [0.05]])   # crosses the line
    assert check_lap_complete(s, 100.0)


def test_oscillation_never_completes():
    s = np.tile([0.0, 1.0], 5000)
    assert not check_lap_complete(s, 100.0)


def test_jittered_forward_progress_completes():
    rng = np.random.default_rng(5)
    deltas = rng.uniform(-0.05, 0.35, size=2000)
    s = np.cumsum(deltas) % 100.0
    expected = np.cumsum(deltas).max() >= 100.0
    assert expected   # trace reaches a net lap
    assert check_lap_complete(np.concatenate([[0.0], s]), 100.0)


def test_backward_lap_does_not_count():
    s = (-np.linspace(0, 150, 800)) % 100.0
    assert not check_lap_complete(s, 100.0)


def test_wrap_progress_delta_signs():
    assert wrap_progress_delta(0.5, 99.5, 100.0) == pytest.approx(1.0)
    assert wrap_progress_delta(99.5, 0.5, 100.0) == pytest.approx(-1.0)
    assert wrap_progress_delta(3.0, 1.0, 100.0) == pytest.approx(2.0)


# --- episode lifecycle -------------------------------------------------------

def test_reset_observation_contract(default_track):
    env = RacingEnv(lidar=LIDAR36)
    obs = env.reset(3, default_track)
    B = 36
    assert len(obs) == observation_dim(B, 4) == 4 * (B + 3)
    frames = obs.reshape(4, B + 3)
    assert np.all((frames[:, :B] >= 0) & (frames[:, :B] <= 1))
    # spawn at rest: speed entry zero, previous action (-1, 0)
    np.testing.assert_array_equal(frames[:, B], 0.0)
    np.testing.assert_array_equal(frames[:, B + 1], -1.0)
    np.testing.assert_array_equal(frames[:, B + 2], 0.0)
    # all frames identical at reset
    assert np.all(frames == frames[0])


def test_reset_deterministic(default_track):
    a = RacingEnv(lidar=LIDAR36).reset(7, default_track)
    b = RacingEnv(lidar=LIDAR36).reset(7, default_track)
    np.testing.assert_array_equal(a, b)


def test_reset_reuses_current_track(default_track):
    env = RacingEnv(lidar=LIDAR36)
    a = env.reset(7, default_track)
    b = env.reset(7)          # no track argument: stay on the current one
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        RacingEnv(lidar=LIDAR36).reset(7)


def test_speed_ramps_up_in_corridor(corridor_track):
    env = RacingEnv(lidar=LIDAR36)
    env.reset(1, corridor_track)
    v_s = []
    for _ in range(20):
        r = env.step(Action(1.0, 0.0))
        v_s.append(r.info.frenet.v_s)
        assert not r.done
    assert v_s[0] > 0
    assert all(b > a for a, b in zip(v_s, v_s[1:]))


def test_wall_ahead_collision_penalty():
    track = make_straight_corridor(half_width=2.0)
    env = RacingEnv(lidar=LIDAR36)
    env.reset(1, track)
    # aim straight at the left wall from just inside it
    env.state = VehicleState(x=50.0, y=1.3, heading=math.pi / 2, speed=3.0)
    result = env.step(Action(1.0, 0.0))
    assert result.info.collision
    assert result.done
    assert result.reward == -1000.0


def test_timeout_contract(corridor_track):
    env = RacingEnv(lidar=LIDAR36, episode=EpisodeConfig(max_steps=5))
    env.reset(1, corridor_track)
    for i in range(5):
        result = env.step(Action(-1.0, 0.0))   # stand still
    assert result.done
    assert result.info.timeout
    assert not result.info.collision
    assert result.reward > -1.0   # no collision penalty


def test_step_after_done_errors(corridor_track):
    env = RacingEnv(lidar=LIDAR36, episode=EpisodeConfig(max_steps=2))
    env.reset(1, corridor_track)
    env.step(Action(-1.0, 0.0))
    env.step(Action(-1.0, 0.0))
    with pytest.raises(EpisodeDoneError):
        env.step(Action(-1.0, 0.0))


def test_step_before_reset_errors():
    env = RacingEnv(lidar=LIDAR36)
    with pytest.raises(EpisodeDoneError):
        env.step(Action(0.0, 0.0))


def test_observation_layout_rolls(corridor_track):
    env = RacingEnv(lidar=LIDAR36)
    obs0 = env.reset(2, corridor_track)
    r1 = env.step(Action(0.5, 0.1))
    B = 36
    f0 = obs0.reshape(4, B + 3)
    f1 = r1.observation.reshape(4, B + 3)
    # oldest three frames of the new obs equal the newest three of the old
    np.testing.assert_array_equal(f1[:3], f0[1:])
    # newest frame carries the action just taken
    assert f1[3, B + 1] == 0.5
    assert f1[3, B + 2] == pytest.approx(0.1)


def test_trajectory_determinism(default_track):
    def run():
        env = RacingEnv(lidar=LIDAR36)
        env.reset(11, default_track)
        rewards = []
        rng = np.random.default_rng(0)
        for _ in range(30):
            a = Action(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
            result = env.step(a)
            rewards.append(result.reward)
            if result.done:
                break
        return rewards

    assert run() == run()


def test_reward_bound_no_collision(default_track):
    env = RacingEnv(lidar=LIDAR36)
    env.reset(4, default_track)
    cfg = env.episode
    v_max = env.vehicle.speed_range[1]
    bound = cfg.c_vs * v_max + cfg.c_vd * v_max + \
        cfg.c_d * float(default_track.half_width.max()) + cfg.c_steer
    rng = np.random.default_rng(8)
    for _ in range(50):
        result = env.step(Action(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))))
        if result.info.collision:
            break
        assert abs(result.reward) <= bound + 1e-9
        if result.done:
            break
