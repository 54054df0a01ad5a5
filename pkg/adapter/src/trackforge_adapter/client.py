"""Line-protocol client for a trackforge environment server.

Speaks newline-delimited JSON over a TCP stream: one request line, one
response line.  Observations come back as plain float lists and are surfaced
unchanged; no numeric transformation happens on this side of the wire.
"""
from __future__ import annotations

import json
import socket
from dataclasses import dataclass

import numpy as np

SUPPORTED_PROTOCOL = 1


class ProtocolError(RuntimeError):
    """Server spoke an unsupported protocol version or a malformed message."""


class ServerError(RuntimeError):
    """The server answered a request with an error message."""


@dataclass
class EnvSpec:
    version: int
    obs_dim: int
    act_dim: int
    act_low: list[float]
    act_high: list[float]


class RemoteEnvHandle:
    """One server connection: a spec cache plus reset/step plumbing."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self.episode_open = False
        spec = self._call({"cmd": "spec"})
        if spec.get("version") != SUPPORTED_PROTOCOL:
            sock.close()
            raise ProtocolError(
                f"server protocol {spec.get('version')!r}, "
                f"client supports {SUPPORTED_PROTOCOL}")
        self.spec = EnvSpec(version=spec["version"], obs_dim=spec["obs_dim"],
                            act_dim=spec["act_dim"], act_low=spec["act_low"],
                            act_high=spec["act_high"])

    def _call(self, request: dict) -> dict:
        self._sock.sendall(json.dumps(request).encode() + b"\n")
        line = self._rfile.readline()
        if not line:
            raise ProtocolError("server closed the connection")
        response = json.loads(line)
        if "error" in response:
            raise ServerError(response["error"])
        return response

    def _obs(self, response: dict) -> np.ndarray:
        obs = np.asarray(response["obs"], dtype=np.float64)
        if obs.shape != (self.spec.obs_dim,):
            raise ProtocolError(f"observation shape {obs.shape} does not match "
                                f"spec obs_dim {self.spec.obs_dim}")
        return obs

    def close(self):
        try:
            self._sock.sendall(json.dumps({"cmd": "close"}).encode() + b"\n")
            self._rfile.readline()
        except OSError:
            pass
        self._sock.close()


def connect(address: str, port: int, timeout: float = 30.0) -> RemoteEnvHandle:
    """Open a connection and fetch the environment spec."""
    sock = socket.create_connection((address, port), timeout=timeout)
    return RemoteEnvHandle(sock)


def reset(handle: RemoteEnvHandle, seed: int | None = None,
          track: str | None = None) -> np.ndarray:
    request = {"cmd": "reset"}
    if seed is not None:
        request["seed"] = int(seed)
    if track is not None:
        request["track"] = track
    obs = handle._obs(handle._call(request))
    handle.episode_open = True
    return obs


def step(handle: RemoteEnvHandle, action) -> tuple[np.ndarray, float, bool, bool, dict]:
    """Forward one action; returns (obs, reward, terminated, truncated, info).

    A done episode maps onto the modern split: collision or lap completion
    terminate the task, a timeout merely truncates it.
    """
    if not handle.episode_open:
        raise ServerError("reset required")
    action = [float(a) for a in np.asarray(action).reshape(-1)]
    if len(action) != handle.spec.act_dim:
        raise ValueError(f"action length {len(action)} != {handle.spec.act_dim}")
    response = handle._call({"cmd": "step", "action": action})
    obs = handle._obs(response)
    done = bool(response["done"])
    info = response.get("info", {})
    terminated = done and bool(info.get("collision") or info.get("lap_complete"))
    truncated = done and not terminated
    if done:
        handle.episode_open = False
    return obs, float(response["reward"]), terminated, truncated, info
