import csv
import math

import numpy as np
import pytest

from trackforge import nn, ppo
from trackforge.dynamics import Action, VehicleConfig
from trackforge.env import EpisodeConfig, RacingEnv
from trackforge.nn import MlpParams
from trackforge.ppo import (RolloutBuffer, RolloutWorker, TrainerConfig,
                            collect_rollouts, compute_gae, evaluate, ppo_loss,
                            train)
from trackforge.sensors import LidarConfig

from conftest import make_circle_track

LIDAR12 = LidarConfig(beam_count=12)


def constant_policy(obs_dim, speed_cmd, steer_cmd, log_std=-0.5):
    """MLP that ignores its input and emits a fixed action mean."""
    return MlpParams(weights=[np.zeros((2, obs_dim))],
                     biases=[np.array([speed_cmd, steer_cmd])],
                     log_std=np.full(2, float(log_std)))


def zero_value(obs_dim):
    return MlpParams(weights=[np.zeros((1, obs_dim))], biases=[np.zeros(1)])


# --- GAE ---------------------------------------------------------------------

def test_gae_lambda_zero_is_td_error():
    rewards = np.array([1.0, 2.0, 3.0])
    values = np.array([0.5, 1.5, 2.5])
    dones = np.array([False, False, True])
    adv, ret = compute_gae(rewards, values, dones, bootstrap_value=9.0,
                           gamma=0.9, lam=0.0)
    # delta_t = r + gamma * V(next) * (1 - done) - V(s)
    expected = np.array([1.0 + 0.9 * 1.5 - 0.5,
                         2.0 + 0.9 * 2.5 - 1.5,
                         3.0 - 2.5])
    np.testing.assert_allclose(adv, expected, atol=1e-12)
    np.testing.assert_allclose(ret, adv + values, atol=1e-12)


def test_gae_single_step_episode():
    adv, ret = compute_gae([5.0], [2.0], [True], bootstrap_value=7.0,
                           gamma=0.99, lam=0.95)
    assert adv[0] == pytest.approx(3.0, abs=1e-12)
    assert ret[0] == pytest.approx(5.0, abs=1e-12)


def test_gae_undiscounted_sums():
    adv, ret = compute_gae([1.0, 1.0, 1.0], [0.0, 0.0, 0.0],
                           [False, False, True], bootstrap_value=0.0,
                           gamma=1.0, lam=1.0)
    np.testing.assert_allclose(adv, [3.0, 2.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(ret, [3.0, 2.0, 1.0], atol=1e-12)


def test_gae_bootstrap_tail():
    adv, _ = compute_gae([1.0], [0.0], [False], bootstrap_value=10.0,
                         gamma=0.5, lam=1.0)
    assert adv[0] == pytest.approx(1.0 + 0.5 * 10.0, abs=1e-12)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.0], [False], 0.0, 0.99, 0.95)


# --- loss --------------------------------------------------------------------

def minibatch_of(ratios, advantages, policy, obs_dim):
    """Build a minibatch whose likelihood ratios under `policy` equal `ratios`
    by back-solving the stored behavior log-probs."""
    n = len(ratios)
    obs = np.zeros((n, obs_dim))
    actions = np.zeros((n, 2))
    mean, _ = nn.forward(policy, obs)
    new_lp, _ = nn.gaussian_log_prob_and_entropy(mean, policy.log_std, actions)
    old_lp = new_lp - np.log(np.asarray(ratios, dtype=float))
    return {"observations": obs, "actions": actions, "log_probs": old_lp,
            "advantages": np.asarray(advantages, dtype=float),
            "returns": np.zeros(n)}


def test_clip_hand_cases():
    cfg = TrainerConfig()
    obs_dim = 4
    policy = constant_policy(obs_dim, 0.0, 0.0)
    value = zero_value(obs_dim)

    # r = 1.5, A = 1, eps = 0.2 -> objective min(1.5, 1.2) = 1.2
    mb = minibatch_of([1.5], [1.0], policy, obs_dim)
    loss, diags = ppo_loss(mb, policy, value, cfg)
    assert diags.policy_loss == pytest.approx(-1.2, abs=1e-9)
    assert diags.clip_fraction == 1.0

    # r = 0.5, A = -1 -> min(-0.5, -0.8) = -0.8 (pessimistic bound)
    mb = minibatch_of([0.5], [-1.0], policy, obs_dim)
    loss, diags = ppo_loss(mb, policy, value, cfg)
    assert diags.policy_loss == pytest.approx(0.8, abs=1e-9)
    assert diags.clip_fraction == 1.0


def test_ratio_identity_fresh_params():
    cfg = TrainerConfig()
    obs_dim = 6
    policy = nn.init_mlp([obs_dim, 8, 2], output_gain=0.01, seed=0,
                         log_std_init=-0.5)
    value = nn.init_mlp([obs_dim, 8, 1], output_gain=1.0, seed=1)
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(16, obs_dim))
    mean, _ = nn.forward(policy, obs)
    actions = mean + rng.normal(size=mean.shape) * 0.3
    log_probs, _ = nn.gaussian_log_prob_and_entropy(mean, policy.log_std, actions)
    adv = rng.normal(size=16)
    mb = {"observations": obs, "actions": actions, "log_probs": log_probs,
          "advantages": adv, "returns": rng.normal(size=16)}
    _, diags = ppo_loss(mb, policy, value, cfg)
    assert diags.clip_fraction == 0.0
    assert diags.policy_loss == pytest.approx(-adv.mean(), abs=1e-9)


def test_epsilon_infinity_is_vanilla_pg():
    # with the clip disabled the policy term reduces to -mean(r * A);
    # hand-built estimator over a 3-transition batch
    cfg = TrainerConfig(surrogate_epsilon=float("inf"))
    obs_dim = 4
    policy = constant_policy(obs_dim, 0.1, -0.2)
    value = zero_value(obs_dim)
    ratios = [0.3, 1.0, 2.7]
    advantages = [1.0, -2.0, 0.5]
    mb = minibatch_of(ratios, advantages, policy, obs_dim)
    _, diags = ppo_loss(mb, policy, value, cfg)
    hand = -np.mean([r * a for r, a in zip(ratios, advantages)])
    assert diags.policy_loss == pytest.approx(hand, abs=1e-9)
    assert diags.clip_fraction == 0.0


def test_value_term_and_total():
    cfg = TrainerConfig()
    obs_dim = 4
    policy = constant_policy(obs_dim, 0.0, 0.0)
    value = zero_value(obs_dim)
    mb = minibatch_of([1.0, 1.0], [0.0, 0.0], policy, obs_dim)
    mb["returns"] = np.array([2.0, -2.0])
    total, diags = ppo_loss(mb, policy, value, cfg)
    assert diags.value_loss == pytest.approx(4.0, abs=1e-12)
    assert total == pytest.approx(0.0 + cfg.value_coef * 4.0, abs=1e-9)


def test_loss_gradients_match_finite_differences():
    cfg = TrainerConfig()
    obs_dim = 5
    policy = nn.init_mlp([obs_dim, 8, 2], output_gain=0.1, seed=3,
                         log_std_init=-0.3)
    value = nn.init_mlp([obs_dim, 8, 1], output_gain=1.0, seed=4)
    rng = np.random.default_rng(5)
    obs = rng.normal(size=(12, obs_dim))
    mean, _ = nn.forward(policy, obs)
    actions = mean + rng.normal(size=mean.shape)
    lp, _ = nn.gaussian_log_prob_and_entropy(mean, policy.log_std, actions)
    mb = {"observations": obs, "actions": actions,
          "log_probs": lp + rng.normal(size=12) * 0.05,
          "advantages": rng.normal(size=12), "returns": rng.normal(size=12)}

    _, _, p_grads, v_grads = ppo._loss_terms(mb, policy, value, cfg, want_grads=True)

    h = 1e-6
    worst = 0.0
    for params, grads in ((policy, p_grads), (value, v_grads)):
        tensors = list(zip(params.weights, grads.weights)) + \
            list(zip(params.biases, grads.biases))
        if params.log_std is not None:
            tensors.append((params.log_std, grads.log_std))
        for arr, g in tensors:
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                orig = arr[i]
                arr[i] = orig + h
                up, _ = ppo_loss(mb, policy, value, cfg)
                arr[i] = orig - h
                down, _ = ppo_loss(mb, policy, value, cfg)
                arr[i] = orig
                fd = (up - down) / (2 * h)
                if abs(fd) > 1e-7 or abs(g[i]) > 1e-7:
                    rel = abs(fd - g[i]) / max(abs(fd), abs(g[i]))
                    worst = max(worst, rel)
    assert worst < 1e-4


# --- rollouts ----------------------------------------------------------------

def make_workers(n, pool, seed=0, lidar=LIDAR12, max_steps=50):
    episode = EpisodeConfig(max_steps=max_steps)
    envs = [RacingEnv(lidar=lidar, episode=episode) for _ in range(n)]
    return [RolloutWorker(env, pool, seed, e) for e, env in enumerate(envs)]


def test_buffer_shape_and_size(track_pool_small):
    cfg = TrainerConfig(num_envs=4, batch_size=64, minibatch_size=16)
    workers = make_workers(4, track_pool_small)
    policy = constant_policy(workers[0].env.observation_dim, -0.5, 0.0)
    value = zero_value(workers[0].env.observation_dim)
    buf = collect_rollouts(workers, policy, value, 16, cfg)
    assert buf.batch_size == 64
    assert buf.observations.shape == (16, 4, workers[0].env.observation_dim)
    buf.compute_advantages(cfg.gamma, cfg.gae_lambda)
    assert np.all(np.isfinite(buf.advantages))


def test_rollout_determinism(track_pool_small):
    cfg = TrainerConfig(num_envs=2, batch_size=32, minibatch_size=8)

    def run():
        workers = make_workers(2, track_pool_small, seed=9)
        policy = constant_policy(workers[0].env.observation_dim, -0.3, 0.0)
        value = zero_value(workers[0].env.observation_dim)
        return collect_rollouts(workers, policy, value, 16, cfg)

    a, b = run(), run()
    for name in ("observations", "actions", "log_probs", "rewards", "values", "dones"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_deterministic_policy_matches_scripted_loop(track_pool_small):
    # log_std -> -inf hook: sigma underflows so sampled action == mean exactly
    cfg = TrainerConfig(num_envs=1, batch_size=16, minibatch_size=4)
    workers = make_workers(1, track_pool_small, seed=3)
    obs_dim = workers[0].env.observation_dim
    policy = constant_policy(obs_dim, -0.4, 0.05, log_std=-60.0)
    value = zero_value(obs_dim)
    buf = collect_rollouts(workers, policy, value, 16, cfg)

    env = RacingEnv(lidar=LIDAR12, episode=EpisodeConfig(max_steps=50))
    mirror = RolloutWorker(env, track_pool_small, 3, 0)
    mirror.begin_episode()
    for t in range(16):
        result = env.step(Action(-0.4, 0.05))
        assert result.reward == buf.rewards[t, 0]
        if result.done:
            mirror.begin_episode()


def test_advantage_normalization(track_pool_small):
    cfg = TrainerConfig(num_envs=2, batch_size=64, minibatch_size=16)
    workers = make_workers(2, track_pool_small)
    obs_dim = workers[0].env.observation_dim
    buf = collect_rollouts(workers, constant_policy(obs_dim, -0.2, 0.0),
                           zero_value(obs_dim), 32, cfg)
    buf.compute_advantages(cfg.gamma, cfg.gae_lambda)
    buf.normalize_advantages()
    assert abs(buf.advantages.mean()) < 1e-6
    assert abs(buf.advantages.std() - 1.0) < 1e-6


def test_truncation_bootstraps_value(track_pool_small):
    # an episode cut by max_steps folds gamma * V(final obs) into its reward
    cfg = TrainerConfig(num_envs=1, batch_size=8, minibatch_size=4, gamma=0.9)
    episode = EpisodeConfig(max_steps=3)
    env = RacingEnv(lidar=LIDAR12, episode=episode)
    workers = [RolloutWorker(env, track_pool_small, 0, 0)]
    obs_dim = env.observation_dim
    policy = constant_policy(obs_dim, -1.0, 0.0, log_std=-60.0)  # stand still -> timeout
    value = MlpParams(weights=[np.zeros((1, obs_dim))], biases=[np.array([7.0])])
    buf = collect_rollouts(workers, policy, value, 8, cfg)
    done_steps = np.nonzero(buf.dones[:, 0])[0]
    assert len(done_steps) >= 2
    for t in done_steps:
        assert buf.rewards[t, 0] == pytest.approx(0.0 + 0.9 * 7.0, abs=1e-9)


# --- evaluate ----------------------------------------------------------------

def circle_pool():
    return [make_circle_track(radius=12.0, spacing=0.25, half_width=2.5)]


def test_scripted_circle_policy_succeeds():
    pool = circle_pool()
    vehicle = VehicleConfig()
    # steer to track a 12 m circle: delta = atan(wheelbase / R)
    steer_cmd = math.atan(vehicle.wheelbase / 12.0) / vehicle.steer_max
    env0 = RacingEnv(lidar=LIDAR12)
    policy = constant_policy(env0.observation_dim, 0.0, steer_cmd, log_std=-60.0)
    results = evaluate(policy, pool, 3, seed=1, lidar=LIDAR12)
    assert all(r.success for r in results)
    assert all(r.lap_time is not None and r.lap_time > 0 for r in results)


def test_scripted_full_steer_policy_crashes():
    # corridor narrower than the full-steer turning circle
    pool = [make_circle_track(radius=12.0, spacing=0.25, half_width=0.8)]
    env0 = RacingEnv(lidar=LIDAR12)
    policy = constant_policy(env0.observation_dim, 1.0, 1.0, log_std=-60.0)
    results = evaluate(policy, pool, 3, seed=1, lidar=LIDAR12)
    assert not any(r.success for r in results)
    assert all(r.collision for r in results)


def test_moving_rate_is_mean_of_flags():
    pool = [make_circle_track(radius=12.0, spacing=0.25, half_width=0.8)]
    env0 = RacingEnv(lidar=LIDAR12)
    policy = constant_policy(env0.observation_dim, 1.0, 1.0, log_std=-60.0)
    results = evaluate(policy, pool, 5, seed=2, lidar=LIDAR12)
    flags = [r.success for r in results]
    assert float(np.mean(flags)) == 0.0
    assert len(flags) == 5


def test_evaluate_deterministic():
    pool = circle_pool()
    env0 = RacingEnv(lidar=LIDAR12)
    policy = constant_policy(env0.observation_dim, 0.3, 0.11, log_std=-60.0)
    a = evaluate(policy, pool, 3, seed=5, lidar=LIDAR12)
    b = evaluate(policy, pool, 3, seed=5, lidar=LIDAR12)
    assert [(r.success, r.episode_return, r.steps) for r in a] == \
        [(r.success, r.episode_return, r.steps) for r in b]


# --- train loop --------------------------------------------------------------

def test_two_updates_two_metric_rows(tmp_path, track_pool_small):
    cfg = TrainerConfig(num_envs=2, batch_size=64, minibatch_size=16,
                        total_steps=128, epochs_per_update=2, eval_interval=1,
                        eval_episodes=1, seed=0)
    episode = EpisodeConfig(max_steps=40)
    result = train(cfg, track_pool_small, tmp_path, lidar=LIDAR12,
                   episode=episode, clock=lambda: 0.0)
    assert result.updates == 2
    assert result.steps == 128
    rows = list(csv.DictReader(open(result.metrics_path)))
    assert len(rows) == 2
    assert rows[0]["update"] == "1" and rows[1]["update"] == "2"
    assert result.policy_path.exists() and result.value_path.exists()
    assert (tmp_path / "train_state.json").exists()


def test_interrupt_retains_artifacts(tmp_path, track_pool_small):
    # a KeyboardInterrupt mid-run (injected through the clock) still leaves
    # the partial metrics file and the latest checkpoint behind
    cfg = TrainerConfig(num_envs=2, batch_size=64, minibatch_size=16,
                        total_steps=640, epochs_per_update=1, eval_interval=100,
                        seed=2)
    calls = [0]

    def exploding_clock():
        calls[0] += 1
        if calls[0] > 4:
            raise KeyboardInterrupt
        return 0.0

    with pytest.raises(KeyboardInterrupt):
        train(cfg, track_pool_small, tmp_path, lidar=LIDAR12,
              episode=EpisodeConfig(max_steps=40), clock=exploding_clock)
    assert (tmp_path / "policy_latest.ckpt").exists()
    assert (tmp_path / "train_state.json").exists()
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert len(rows) >= 1


def test_resume_continues_counters(tmp_path, track_pool_small):
    cfg = TrainerConfig(num_envs=2, batch_size=64, minibatch_size=16,
                        total_steps=128, epochs_per_update=1, eval_interval=4,
                        seed=1)
    episode = EpisodeConfig(max_steps=40)
    train(cfg, track_pool_small, tmp_path, lidar=LIDAR12, episode=episode,
          clock=lambda: 0.0)
    cfg2 = TrainerConfig(num_envs=2, batch_size=64, minibatch_size=16,
                         total_steps=256, epochs_per_update=1, eval_interval=4,
                         seed=1)
    result = train(cfg2, track_pool_small, tmp_path, lidar=LIDAR12,
                   episode=episode, resume=True, clock=lambda: 0.0)
    assert result.steps == 256
    rows = list(csv.DictReader(open(result.metrics_path)))
    steps = [int(r["step"]) for r in rows]
    assert steps == sorted(steps) and steps[-1] == 256
    assert len(rows) == 4
