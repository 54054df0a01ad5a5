"""PPO training loop: rollout collection across environments, generalized
advantage estimation, clipped-surrogate updates with Adam, periodic
evaluation with a moving success rate, and checkpointing."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dynamics import Action, VehicleConfig
from .env import EpisodeConfig, RacingEnv, observation_dim
from .sensors import LidarConfig
from .trackgen import TrackMap


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss; the last checkpoint is kept."""


@dataclass(frozen=True)
class TrainerConfig:
    lr: float = 1e-4
    grad_clip: float = 0.02
    entropy_coef: float = 0.0
    batch_size: int = 2048
    minibatch_size: int = 256
    gamma: float = 0.998
    stack_depth: int = 4
    surrogate_epsilon: float = 0.2
    gae_lambda: float = 0.95
    epochs_per_update: int = 10
    value_coef: float = 0.5
    num_envs: int = 8
    total_steps: int = 500_000
    eval_interval: int = 16              # updates between evaluation rounds
    eval_episodes: int = 4
    eval_window: int = 40
    seed: int = 0
    policy_hidden: tuple[int, int] = (32, 32)
    value_hidden: tuple[int, int] = (64, 64)
    log_std_init: float = -0.5
    success_rate_target: float | None = None   # early stop once the window hits this

    def validate(self) -> list[str]:
        errs = []
        if self.batch_size % self.minibatch_size != 0:
            errs.append("batch_size: must be divisible by minibatch_size")
        if self.batch_size % self.num_envs != 0:
            errs.append("batch_size: must be divisible by num_envs")
        if not (0.0 < self.gamma <= 1.0):
            errs.append("gamma: must be in (0, 1]")
        if not (0.0 <= self.gae_lambda <= 1.0):
            errs.append("gae_lambda: must be in [0, 1]")
        if self.lr <= 0 or self.grad_clip <= 0 or self.surrogate_epsilon <= 0:
            errs.append("lr/grad_clip/surrogate_epsilon: must be positive")
        if self.stack_depth < 1:
            errs.append("stack_depth: must be >= 1")
        if min(self.total_steps, self.epochs_per_update, self.num_envs,
               self.eval_interval, self.eval_episodes, self.eval_window) < 1:
            errs.append("total_steps/epochs_per_update/num_envs/eval_interval/"
                        "eval_episodes/eval_window: must be >= 1")
        for name in ("entropy_coef", "value_coef"):
            if not math.isfinite(getattr(self, name)):
                errs.append(f"{name}: must be finite")
        return errs


@dataclass
class Transition:
    observation: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value: float
    done: bool
    env_index: int
    step_index: int


@dataclass
class RolloutBuffer:
    observations: np.ndarray      # (T, E, obs_dim)
    actions: np.ndarray           # (T, E, act_dim)
    log_probs: np.ndarray         # (T, E)
    rewards: np.ndarray           # (T, E), truncation bootstrap already folded in
    values: np.ndarray            # (T, E)
    dones: np.ndarray             # (T, E) bool
    bootstrap_values: np.ndarray  # (E,)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.observations.shape[0] * self.observations.shape[1]

    def compute_advantages(self, gamma: float, lam: float) -> None:
        T, E = self.rewards.shape
        adv = np.empty((T, E))
        ret = np.empty((T, E))
        for e in range(E):
            a, r = compute_gae(self.rewards[:, e], self.values[:, e],
                               self.dones[:, e], float(self.bootstrap_values[e]),
                               gamma, lam)
            adv[:, e], ret[:, e] = a, r
        self.advantages = adv
        self.returns = ret

    def normalize_advantages(self) -> None:
        a = self.advantages
        mean, std = a.mean(), a.std()
        if std > 1e-8:
            self.advantages = (a - mean) / std
        else:
            self.advantages = a - mean

    def flat(self) -> dict[str, np.ndarray]:
        T, E = self.rewards.shape
        return {
            "observations": self.observations.reshape(T * E, -1),
            "actions": self.actions.reshape(T * E, -1),
            "log_probs": self.log_probs.reshape(T * E),
            "advantages": self.advantages.reshape(T * E),
            "returns": self.returns.reshape(T * E),
        }


def compute_gae(rewards, values, dones, bootstrap_value: float,
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward GAE over one environment stream.

    dones flag episode ends; a flagged step bootstraps with value zero (a
    truncated episode should have the bootstrap folded into its last reward
    by the collector).  The final step, when not done, bootstraps with
    bootstrap_value.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("rewards, values and dones must have equal length")
    T = len(rewards)
    adv = np.empty(T)
    next_value = float(bootstrap_value)
    next_adv = 0.0
    for t in range(T - 1, -1, -1):
        keep = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * keep - values[t]
        next_adv = delta + gamma * lam * keep * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


@dataclass
class PpoDiagnostics:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float


def _policy_forward(policy: nn.MlpParams, obs: np.ndarray):
    mean, cache = nn.forward(policy, obs)
    return mean, cache


def _loss_terms(minibatch: dict[str, np.ndarray], policy: nn.MlpParams,
                value: nn.MlpParams, cfg: TrainerConfig, want_grads: bool):
    obs = minibatch["observations"]
    actions = minibatch["actions"]
    old_log_probs = minibatch["log_probs"]
    adv = minibatch["advantages"]
    returns = minibatch["returns"]
    m = len(obs)

    mean, p_cache = _policy_forward(policy, obs)
    new_log_probs, entropy = nn.gaussian_log_prob_and_entropy(mean, policy.log_std, actions)
    ratio = np.exp(new_log_probs - old_log_probs)
    lo, hi = 1.0 - cfg.surrogate_epsilon, 1.0 + cfg.surrogate_epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    objective = np.minimum(unclipped, clipped)
    policy_loss = -objective.mean()
    clip_fraction = float(np.mean((ratio < lo) | (ratio > hi)))

    v_pred, v_cache = nn.forward(value, obs)
    v_pred = v_pred[:, 0]
    v_err = v_pred - returns
    value_loss = float((v_err ** 2).mean())
    mean_entropy = float(np.mean(entropy))

    total = float(policy_loss) + cfg.value_coef * value_loss \
        - cfg.entropy_coef * mean_entropy
    diags = PpoDiagnostics(policy_loss=float(policy_loss), value_loss=value_loss,
                           entropy=mean_entropy, clip_fraction=clip_fraction)
    if not want_grads:
        return total, diags, None, None

    # min(u, c) passes gradient through the unclipped branch exactly when
    # u <= c; elsewhere the clipped branch is constant in the parameters
    active = unclipped <= clipped
    grad_logp = -(active * ratio * adv) / m          # dL/d new_log_prob per sample
    std = np.exp(policy.log_std)
    z = (actions - mean) / std
    mean_grad = grad_logp[:, None] * (z / std)       # dL/d mean
    p_grads = nn.backward(policy, p_cache, mean_grad)
    p_grads.log_std = (grad_logp[:, None] * (z ** 2 - 1.0)).sum(axis=0)
    p_grads.log_std -= cfg.entropy_coef * np.ones_like(policy.log_std)

    v_grad = (cfg.value_coef * 2.0 / m) * v_err
    v_grads = nn.backward(value, v_cache, v_grad[:, None])
    return total, diags, p_grads, v_grads


def ppo_loss(minibatch: dict[str, np.ndarray], policy_params: nn.MlpParams,
             value_params: nn.MlpParams, cfg: TrainerConfig,
             ) -> tuple[float, PpoDiagnostics]:
    """Clipped-surrogate + value + entropy loss over a minibatch whose
    advantages were already normalized at batch level."""
    total, diags, _, _ = _loss_terms(minibatch, policy_params, value_params, cfg,
                                     want_grads=False)
    if not math.isfinite(total):
        raise TrainingAborted(f"non-finite loss: {diags}")
    return total, diags


class RolloutWorker:
    """One environment plus its private RNG stream and track sampling."""

    def __init__(self, env: RacingEnv, track_pool: list[TrackMap], master_seed: int,
                 index: int):
        self.env = env
        self.pool = track_pool
        self.master_seed = master_seed
        self.index = index
        self.rng = np.random.default_rng(
            np.random.SeedSequence((master_seed, 0xA11, index)))
        self.obs: np.ndarray | None = None
        self.episode_return = 0.0
        self.completed_returns: list[float] = []

    def begin_episode(self) -> None:
        track = self.pool[int(self.rng.integers(len(self.pool)))]
        seed = int(self.rng.integers(2 ** 62))
        self.obs = self.env.reset(seed, track)
        self.episode_return = 0.0


def collect_rollouts(workers: list[RolloutWorker], policy_params: nn.MlpParams,
                     value_params: nn.MlpParams, n_steps: int,
                     cfg: TrainerConfig) -> RolloutBuffer:
    """Gather n_steps transitions from every worker under the current policy.

    Episodes ending mid-collection reset immediately on a fresh track from the
    pool; truncated (timeout) episodes fold gamma * V(final obs) into their
    last reward so advantage estimation treats them as continuing tasks.
    """
    E = len(workers)
    for w in workers:
        if w.obs is None:
            w.begin_episode()
    obs_dim = len(workers[0].obs)
    act_dim = len(policy_params.log_std)

    observations = np.empty((n_steps, E, obs_dim))
    actions = np.empty((n_steps, E, act_dim))
    log_probs = np.empty((n_steps, E))
    rewards = np.empty((n_steps, E))
    values = np.empty((n_steps, E))
    dones = np.zeros((n_steps, E), dtype=bool)

    for t in range(n_steps):
        obs_batch = np.stack([w.obs for w in workers])
        means, _ = nn.forward(policy_params, obs_batch)
        v_batch, _ = nn.forward(value_params, obs_batch)
        observations[t] = obs_batch
        values[t] = v_batch[:, 0]
        for e, w in enumerate(workers):
            action, log_prob = nn.gaussian_sample(means[e], policy_params.log_std, w.rng)
            result = w.env.step(Action(float(action[0]), float(action[1])))
            reward = result.reward
            w.episode_return += reward
            actions[t, e] = action
            log_probs[t, e] = log_prob
            dones[t, e] = result.done
            if result.done:
                if result.info.timeout:
                    v_final, _ = nn.forward(value_params, result.observation)
                    reward = reward + cfg.gamma * float(v_final[0])
                w.completed_returns.append(w.episode_return)
                w.begin_episode()
            else:
                w.obs = result.observation
            rewards[t, e] = reward

    final_obs = np.stack([w.obs for w in workers])
    v_final, _ = nn.forward(value_params, final_obs)
    return RolloutBuffer(observations=observations, actions=actions,
                         log_probs=log_probs, rewards=rewards, values=values,
                         dones=dones, bootstrap_values=v_final[:, 0])


@dataclass
class EvalEpisode:
    success: bool
    episode_return: float
    lap_time: float | None
    steps: int
    collision: bool
    timeout: bool


def evaluate(policy_params: nn.MlpParams, track_pool: list[TrackMap],
             n_episodes: int, seed: int,
             vehicle: VehicleConfig | None = None,
             lidar: LidarConfig | None = None,
             episode: EpisodeConfig | None = None,
             stochastic: bool = False,
             trajectory_sink=None) -> list[EvalEpisode]:
    """Run evaluation episodes with the deterministic policy mean.

    Success means completing the lap without collision before timeout.
    trajectory_sink, when given, is called with (episode_index, records) where
    records are (t, x, y, heading, speed) tuples.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xEA1)))
    env = RacingEnv(vehicle=vehicle, lidar=lidar, episode=episode)
    results = []
    for i in range(n_episodes):
        track = track_pool[int(rng.integers(len(track_pool)))]
        ep_seed = int(rng.integers(2 ** 62))
        obs = env.reset(ep_seed, track)
        records = [(env.state.time, env.state.x, env.state.y,
                    env.state.heading, env.state.speed)]
        total = 0.0
        steps = 0
        while True:
            mean, _ = nn.forward(policy_params, obs)
            if stochastic:
                action_vec, _ = nn.gaussian_sample(mean, policy_params.log_std, rng)
            else:
                action_vec = mean
            result = env.step(Action(float(action_vec[0]), float(action_vec[1])))
            obs = result.observation
            total += result.reward
            steps += 1
            records.append((env.state.time, env.state.x, env.state.y,
                            env.state.heading, env.state.speed))
            if result.done:
                info = result.info
                results.append(EvalEpisode(
                    success=info.lap_complete and not info.collision,
                    episode_return=total,
                    lap_time=env.state.time if info.lap_complete else None,
                    steps=steps, collision=info.collision, timeout=info.timeout))
                break
        if trajectory_sink is not None:
            trajectory_sink(i, records)
    return results


@dataclass
class TrainResult:
    updates: int
    steps: int
    metrics_path: Path
    policy_path: Path
    value_path: Path
    best_success_rate: float
    eval_flags: list[bool] = field(default_factory=list)
    stopped_early: bool = False


def _write_sidecar(out_dir: Path, cfg: TrainerConfig, vehicle: VehicleConfig,
                   lidar: LidarConfig, episode: EpisodeConfig, update: int,
                   step: int, eval_flags: list[bool], best_rate: float) -> None:
    doc = {
        "trainer": asdict(cfg), "vehicle": asdict(vehicle), "lidar": asdict(lidar),
        "episode": asdict(episode), "update": update, "step": step,
        "eval_flags": [bool(f) for f in eval_flags], "best_success_rate": best_rate,
    }
    (out_dir / "train_state.json").write_text(json.dumps(doc, indent=2) + "\n")


def load_sidecar(path) -> dict:
    return json.loads(Path(path).read_text())


def train(cfg: TrainerConfig, track_pool: list[TrackMap], out_dir,
          vehicle: VehicleConfig | None = None, lidar: LidarConfig | None = None,
          episode: EpisodeConfig | None = None, resume: bool = False,
          clock=None, log=None) -> TrainResult:
    """Run the full PPO loop: collect -> GAE -> clipped updates, with metrics
    rows per update, periodic evaluation, and latest/best checkpoints.

    clock is injectable for reproducible wall-time fields; resume continues
    from the latest checkpoint in out_dir with a monotone step counter.
    """
    errs = cfg.validate()
    if errs:
        raise ValueError("invalid TrainerConfig: " + "; ".join(errs))
    if not track_pool:
        raise ValueError("track pool is empty")
    vehicle = vehicle or VehicleConfig()
    lidar = lidar or LidarConfig()
    episode = episode or EpisodeConfig(stack_depth=cfg.stack_depth)
    if episode.stack_depth != cfg.stack_depth:
        raise ValueError("trainer.stack_depth disagrees with episode.stack_depth")
    clock = clock or time.perf_counter
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    policy_latest = out_dir / "policy_latest.ckpt"
    value_latest = out_dir / "value_latest.ckpt"

    obs_dim = observation_dim(lidar.beam_count, cfg.stack_depth)
    policy_sizes = [obs_dim, *cfg.policy_hidden, 2]
    value_sizes = [obs_dim, *cfg.value_hidden, 1]

    update0, step0 = 0, 0
    eval_flags: list[bool] = []
    best_rate = 0.0
    if resume and (out_dir / "train_state.json").exists():
        state = load_sidecar(out_dir / "train_state.json")
        update0, step0 = state["update"], state["step"]
        eval_flags = [bool(f) for f in state["eval_flags"]]
        best_rate = state["best_success_rate"]
        policy, _ = nn.load_checkpoint(policy_latest)
        value, _ = nn.load_checkpoint(value_latest)
        if policy.layer_sizes != policy_sizes:
            raise ValueError(f"checkpoint policy sizes {policy.layer_sizes} do not "
                             f"match configured {policy_sizes}")
    else:
        seed_root = np.random.SeedSequence((cfg.seed, 0x1417))
        p_seed, v_seed = seed_root.spawn(2)
        policy = nn.init_mlp(policy_sizes, output_gain=0.01, seed=p_seed,
                             log_std_init=cfg.log_std_init)
        value = nn.init_mlp(value_sizes, output_gain=1.0, seed=v_seed)

    p_adam = nn.init_adam(policy)
    v_adam = nn.init_adam(value)

    envs = [RacingEnv(vehicle=vehicle, lidar=lidar, episode=episode)
            for _ in range(cfg.num_envs)]
    workers = [RolloutWorker(env, track_pool, cfg.seed, e)
               for e, env in enumerate(envs)]
    n_steps = cfg.batch_size // cfg.num_envs
    n_updates = max(1, (cfg.total_steps - step0) // cfg.batch_size)

    new_file = not (resume and metrics_path.exists())
    metrics_file = open(metrics_path, "w" if new_file else "a", newline="")
    writer = csv.writer(metrics_file)
    if new_file:
        writer.writerow(["update", "step", "mean_ep_reward", "policy_loss",
                         "value_loss", "entropy", "clip_frac", "success_rate",
                         "wall_s"])
    t_start = clock()
    step = step0
    update = update0
    last_success = "" if not eval_flags else repr(
        float(np.mean(eval_flags[-cfg.eval_window:])))
    last_mean_reward = ""
    stopped_early = False

    def save_latest():
        nn.save_checkpoint(policy, policy_latest, output_gain=0.01)
        nn.save_checkpoint(value, value_latest, output_gain=1.0)
        _write_sidecar(out_dir, cfg, vehicle, lidar, episode, update, step,
                       eval_flags, best_rate)

    try:
        for _ in range(n_updates):
            buffer = collect_rollouts(workers, policy, value, n_steps, cfg)
            buffer.compute_advantages(cfg.gamma, cfg.gae_lambda)
            buffer.normalize_advantages()
            flat = buffer.flat()

            shuffle_rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, 0x5F1E, update)))
            diag_acc = []
            for _epoch in range(cfg.epochs_per_update):
                perm = shuffle_rng.permutation(cfg.batch_size)
                for lo in range(0, cfg.batch_size, cfg.minibatch_size):
                    idx = perm[lo:lo + cfg.minibatch_size]
                    mb = {k: v[idx] for k, v in flat.items()}
                    total, diags, p_grads, v_grads = _loss_terms(
                        mb, policy, value, cfg, want_grads=True)
                    if not math.isfinite(total):
                        raise TrainingAborted(f"non-finite loss at update {update}: {diags}")
                    nn.adam_update(policy, p_grads, p_adam, cfg.lr, cfg.grad_clip)
                    nn.adam_update(value, v_grads, v_adam, cfg.lr, cfg.grad_clip)
                    diag_acc.append(diags)

            update += 1
            step += cfg.batch_size
            finished = [r for w in workers for r in w.completed_returns]
            for w in workers:
                w.completed_returns.clear()
            if finished:
                last_mean_reward = repr(float(np.mean(finished)))

            if update % cfg.eval_interval == 0:
                episodes = evaluate(policy, track_pool, cfg.eval_episodes,
                                    seed=cfg.seed * 1_000_003 + update,
                                    vehicle=vehicle, lidar=lidar, episode=episode)
                eval_flags.extend(ep.success for ep in episodes)
                rate = float(np.mean(eval_flags[-cfg.eval_window:]))
                last_success = repr(rate)
                if rate >= best_rate:
                    best_rate = rate
                    nn.save_checkpoint(policy, out_dir / "policy_best.ckpt",
                                       output_gain=0.01)
                    nn.save_checkpoint(value, out_dir / "value_best.ckpt",
                                       output_gain=1.0)
                save_latest()
                if (cfg.success_rate_target is not None
                        and len(eval_flags) >= cfg.eval_window
                        and rate >= cfg.success_rate_target):
                    stopped_early = True

            writer.writerow([
                update, step, last_mean_reward,
                repr(float(np.mean([d.policy_loss for d in diag_acc]))),
                repr(float(np.mean([d.value_loss for d in diag_acc]))),
                repr(float(np.mean([d.entropy for d in diag_acc]))),
                repr(float(np.mean([d.clip_fraction for d in diag_acc]))),
                last_success,
                repr(float(clock() - t_start)),
            ])
            metrics_file.flush()
            if log is not None:
                log(f"update {update} step {step} reward {last_mean_reward or 'n/a'} "
                    f"success {last_success or 'n/a'}")
            if stopped_early:
                break
    finally:
        save_latest()
        metrics_file.close()

    return TrainResult(updates=update, steps=step, metrics_path=metrics_path,
                       policy_path=policy_latest, value_path=value_latest,
                       best_success_rate=best_rate, eval_flags=eval_flags,
                       stopped_early=stopped_early)
