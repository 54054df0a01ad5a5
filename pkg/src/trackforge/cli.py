"""Command-line entry points: track generation, training, evaluation, the
environment server, and trajectory replay rendering.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import nn, ppo
from .config import SEED_ENV_VAR, ConfigError, load_run_config
from .env import observation_dim
from .plots import render_track_svg, svg_line_chart
from .trackgen import (MAP_SUFFIX, ObstaclePlacementError, TrackGenConfig,
                       TrackGenerationError, generate_track, load_map,
                       place_obstacles, save_map, validate_track)
from .wire import EnvServer, load_track_pool

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _master_seed(default: int) -> int:
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        return int(env_seed)
    return default


def cmd_gen_tracks(count: int, seed: int, config: TrackGenConfig, out_dir) -> int:
    """Write `count` validated .track.json files; idempotent for a fixed seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for i in range(count):
        track_seed = seed * 1_000_003 + i
        try:
            track = generate_track(track_seed, config)
            track = place_obstacles(track, track_seed, config)
            issues = validate_track(track, config)
            if issues:
                raise TrackGenerationError(
                    f"validation failed: {issues[0].check}: {issues[0].message}")
        except (TrackGenerationError, ObstaclePlacementError) as e:
            print(f"track {i}: {e}", file=sys.stderr)
            failures += 1
            continue
        save_map(track, out / f"track_{i:04d}_seed{track_seed}{MAP_SUFFIX}")
    if failures:
        print(f"{failures}/{count} tracks failed to generate", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {count} tracks to {out}")
    return EXIT_OK


def _emit_training_plots(metrics_path: Path, out_dir: Path) -> None:
    steps, rewards, rates = [], [], []
    with open(metrics_path) as f:
        for row in csv.DictReader(f):
            step = int(row["step"])
            if row["mean_ep_reward"]:
                steps.append(step)
                rewards.append(float(row["mean_ep_reward"]))
            if row["success_rate"]:
                rates.append((step, float(row["success_rate"])))
    svg_line_chart(steps, rewards, out_dir / "reward_curve.svg",
                   title="Episodic reward", x_label="environment steps",
                   y_label="mean episode reward", moving_avg_window=10)
    svg_line_chart([s for s, _ in rates], [r for _, r in rates],
                   out_dir / "success_rate.svg",
                   title="Evaluation success rate",
                   x_label="environment steps", y_label="moving success rate")


def cmd_train(config_path, out_dir, resume: bool = False) -> int:
    cfg = load_run_config(config_path, check_paths=True)
    pool = load_track_pool(cfg.paths.track_dir)
    if not pool:
        print(f"no {MAP_SUFFIX} files in {cfg.paths.track_dir}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    import dataclasses
    trainer = dataclasses.replace(cfg.trainer, seed=_master_seed(cfg.seed))
    interrupted = False
    try:
        result = ppo.train(trainer, pool, out, vehicle=cfg.vehicle, lidar=cfg.lidar,
                           episode=cfg.episode, resume=resume,
                           log=lambda msg: print(msg, file=sys.stderr))
    except KeyboardInterrupt:
        interrupted = True
    except ppo.TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        _emit_training_plots(out / "metrics.csv", out)
        return EXIT_RUNTIME
    _emit_training_plots(out / "metrics.csv", out)
    if interrupted:
        print("interrupted; metrics and latest checkpoint retained", file=sys.stderr)
    else:
        print(f"trained {result.steps} steps over {result.updates} updates; "
              f"best success rate {result.best_success_rate:.3f}")
    return EXIT_OK


def cmd_eval(checkpoint, tracks, episodes: int, seed: int,
             trajectories_dir=None) -> int:
    ckpt_path = Path(checkpoint)
    sidecar_path = ckpt_path.parent / "train_state.json"
    if not sidecar_path.exists():
        print(f"missing sidecar {sidecar_path}; cannot reconstruct the "
              "environment configuration", file=sys.stderr)
        return EXIT_VALIDATION
    state = ppo.load_sidecar(sidecar_path)
    from .dynamics import VehicleConfig
    from .env import EpisodeConfig
    from .sensors import LidarConfig

    def build(cls, doc):
        return cls(**{k: tuple(v) if isinstance(v, list) else v
                      for k, v in doc.items()})

    vehicle = build(VehicleConfig, state["vehicle"])
    lidar = build(LidarConfig, state["lidar"])
    episode = build(EpisodeConfig, state["episode"])

    policy, header = nn.load_checkpoint(ckpt_path)
    expected = observation_dim(lidar.beam_count, episode.stack_depth)
    if header.layer_sizes[0] != expected:
        print(f"dimension mismatch: checkpoint expects observation size "
              f"{header.layer_sizes[0]}, environment produces {expected}",
              file=sys.stderr)
        return EXIT_VALIDATION

    pool = load_track_pool(tracks)
    if not pool:
        print(f"no {MAP_SUFFIX} files in {tracks}", file=sys.stderr)
        return EXIT_VALIDATION

    sink = None
    traj_records = {}
    if trajectories_dir is not None:
        Path(trajectories_dir).mkdir(parents=True, exist_ok=True)

        def sink(i, records):
            traj_records[i] = records

    results = ppo.evaluate(policy, pool, episodes, _master_seed(seed),
                           vehicle=vehicle, lidar=lidar, episode=episode,
                           trajectory_sink=sink)
    window = min(episodes, 40)
    rate = float(np.mean([r.success for r in results[-window:]])) if results else 0.0
    report = {
        "episodes": [
            {"success": r.success, "return": r.episode_return,
             "lap_time": r.lap_time, "steps": r.steps,
             "collision": r.collision, "timeout": r.timeout}
            for r in results
        ],
        "success_rate": rate,
        "window": window,
    }
    text = json.dumps(report, indent=2)
    print(text)
    (ckpt_path.parent / "eval_report.json").write_text(text + "\n")
    if trajectories_dir is not None:
        for i, records in traj_records.items():
            doc = {"records": [[t, x, y, h, v] for t, x, y, h, v in records]}
            (Path(trajectories_dir) / f"episode_{i:03d}.json").write_text(
                json.dumps(doc) + "\n")
    return EXIT_OK


def cmd_serve(config_path, port: int) -> int:
    cfg = load_run_config(config_path, check_paths=True)
    pool = load_track_pool(cfg.paths.track_dir)
    if not pool:
        print(f"no {MAP_SUFFIX} files in {cfg.paths.track_dir}", file=sys.stderr)
        return EXIT_VALIDATION
    server = EnvServer(cfg, pool, port=port)
    print(f"listening on 127.0.0.1:{server.port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _load_trajectory(path) -> list[tuple[float, float, float, float, float]]:
    doc = json.loads(Path(path).read_text())
    raw = doc["records"] if isinstance(doc, dict) else doc
    records = []
    prev = None
    for r in raw:
        if isinstance(r, dict):
            t, x, y, h = r["t"], r["x"], r["y"], r["heading"]
            v = r.get("speed")
        else:
            t, x, y, h = r[0], r[1], r[2], r[3]
            v = r[4] if len(r) > 4 else None
        if v is None:
            if prev is not None and t > prev[0]:
                v = math.hypot(x - prev[1], y - prev[2]) / (t - prev[0])
            else:
                v = 0.0
        records.append((float(t), float(x), float(y), float(h), float(v)))
        prev = (t, x, y)
    return records


def cmd_replay(trajectory_path, track_path, out_path) -> int:
    track = load_map(track_path)
    trajectory = _load_trajectory(trajectory_path)
    if trajectory:
        from . import frenet
        from .trackgen import half_width_at
        index = frenet.build_index(track)
        sample = trajectory[:: max(1, len(trajectory) // 50)]
        off_track = 0
        for _, x, y, _, _ in sample:
            try:
                s, d = frenet.to_frenet((x, y), index)
                if abs(d) > float(half_width_at(track, s)) + 1.0:
                    off_track += 1
            except frenet.OutOfCorridorError:
                off_track += 1
        if off_track:
            print(f"warning: {off_track}/{len(sample)} sampled trajectory points "
                  "lie far outside the corridor; wrong track?", file=sys.stderr)
    render_track_svg(track, out_path, trajectory=trajectory)
    print(f"wrote {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackforge",
        description="Procedural racing tracks, lidar/bicycle simulation, and "
                    "PPO training on raw lidar + odometry.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tracks", help="generate a pool of track files")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, default=None,
                   help="run config JSON; its track_gen section is used")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train a PPO agent")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("eval", help="evaluate a policy checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--tracks", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectories", type=Path, default=None,
                   help="directory for per-episode trajectory JSON files")

    p = sub.add_parser("serve", help="serve environments over TCP")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--port", type=int, required=True)

    p = sub.add_parser("replay", help="render a trajectory over its track")
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--track", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-tracks":
            if args.config is not None:
                cfg = load_run_config(args.config)
                gen_cfg = cfg.track_gen
            else:
                gen_cfg = TrackGenConfig()
            return cmd_gen_tracks(args.count, _master_seed(args.seed),
                                  gen_cfg, args.out)
        if args.command == "train":
            return cmd_train(args.config, args.out, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.tracks, args.episodes,
                            args.seed, trajectories_dir=args.trajectories)
        if args.command == "serve":
            return cmd_serve(args.config, args.port)
        if args.command == "replay":
            return cmd_replay(args.trajectory, args.track, args.out)
        return EXIT_VALIDATION
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"not found: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
