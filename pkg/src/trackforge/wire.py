"""Newline-delimited JSON environment protocol and the TCP server behind it.

Each connection owns one environment instance.  Requests are single-line JSON
objects {"cmd": "spec" | "reset" | "step" | "close", ...}; every request gets
exactly one JSON-line response.  Floats survive the wire bit-exactly because
Python's JSON formatter emits shortest round-trip representations.
"""
from __future__ import annotations

import json
import socketserver
import threading
from pathlib import Path

from .config import RunConfig
from .dynamics import Action
from .env import RacingEnv
from .trackgen import TrackMap, load_map

PROTOCOL_VERSION = 1


class EnvSession:
    """Protocol state machine for one connection; transport-agnostic."""

    def __init__(self, config: RunConfig, track_pool: list[TrackMap]):
        if not track_pool:
            raise ValueError("track pool is empty")
        self.config = config
        self.pool = track_pool
        self.env = RacingEnv(vehicle=config.vehicle, lidar=config.lidar,
                             episode=config.episode)
        self._episode_open = False
        self._reset_count = 0
        self.closed = False

    def spec(self) -> dict:
        return {
            "version": PROTOCOL_VERSION,
            "obs_dim": self.env.observation_dim,
            "act_dim": 2,
            "act_low": [-1.0, -1.0],
            "act_high": [1.0, 1.0],
        }

    def _resolve_track(self, name: str | None, seed: int) -> TrackMap:
        if name is None:
            return self.pool[seed % len(self.pool)]
        path = Path(name)
        if not path.is_absolute():
            path = Path(self.config.paths.track_dir) / path
        return load_map(path)

    def handle(self, request: dict) -> dict:
        if not isinstance(request, dict) or "cmd" not in request:
            return {"error": "request must be an object with a 'cmd' field"}
        cmd = request["cmd"]
        try:
            if cmd == "spec":
                return self.spec()
            if cmd == "reset":
                if "seed" in request:
                    seed = int(request["seed"])
                else:
                    seed = self.config.seed * 1_000_003 + self._reset_count
                self._reset_count += 1
                track = self._resolve_track(request.get("track"), seed)
                obs = self.env.reset(seed, track)
                self._episode_open = True
                return {"obs": obs.tolist()}
            if cmd == "step":
                if not self._episode_open:
                    return {"error": "reset required"}
                action = request.get("action")
                if (not isinstance(action, (list, tuple)) or len(action) != 2
                        or not all(isinstance(a, (int, float)) for a in action)):
                    return {"error": "'action' must be a list of two numbers"}
                result = self.env.step(Action(float(action[0]), float(action[1])))
                if result.done:
                    self._episode_open = False
                f = result.info.frenet
                return {
                    "obs": result.observation.tolist(),
                    "reward": result.reward,
                    "done": result.done,
                    "info": {
                        "frenet": {"s": f.s, "d": f.d, "v_s": f.v_s, "v_d": f.v_d},
                        "collision": result.info.collision,
                        "lap_complete": result.info.lap_complete,
                        "timeout": result.info.timeout,
                    },
                }
            if cmd == "close":
                self.closed = True
                return {}
            return {"error": f"unknown cmd {cmd!r}"}
        except Exception as e:                        # surface as protocol error
            return {"error": f"{type(e).__name__}: {e}"}


def encode(message: dict) -> bytes:
    return json.dumps(message, separators=(",", ":")).encode() + b"\n"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = EnvSession(self.server.run_config, self.server.track_pool)
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError as e:
                self.wfile.write(encode({"error": f"malformed JSON: {e}"}))
                continue
            response = session.handle(request)
            self.wfile.write(encode(response))
            if session.closed:
                break


class EnvServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: RunConfig, track_pool: list[TrackMap],
                 host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.run_config = config
        self.track_pool = track_pool

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def load_track_pool(track_dir) -> list[TrackMap]:
    paths = sorted(Path(track_dir).glob("*.track.json"))
    return [load_map(p) for p in paths]
