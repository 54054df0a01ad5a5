"""Gymnasium-facing wrapper around the remote environment client."""
from __future__ import annotations

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from . import client


class TrackforgeRemoteEnv(gym.Env):
    """Standard step/reset environment backed by a trackforge server.

    Observations are the server's flat frame-stacked vectors (lidar in [0, 1],
    speed in [0, 1], previous action in [-1, 1]), so [-1, 1] bounds the whole
    vector; actions are the two normalized controls.
    """

    metadata = {"render_modes": []}

    def __init__(self, host: str = "127.0.0.1", port: int = 5555,
                 render_mode: str | None = None):
        super().__init__()
        self.render_mode = render_mode
        self._handle = client.connect(host, port)
        spec = self._handle.spec
        self.observation_space = spaces.Box(low=-1.0, high=1.0,
                                            shape=(spec.obs_dim,),
                                            dtype=np.float64)
        self.action_space = spaces.Box(low=np.asarray(spec.act_low),
                                       high=np.asarray(spec.act_high),
                                       dtype=np.float64)

    def reset(self, *, seed: int | None = None, options: dict | None = None):
        super().reset(seed=seed)
        if seed is None:
            # continue the seeded stream so seeded-then-unseeded reset
            # sequences reproduce, per the standard env contract
            seed = int(self.np_random.integers(2 ** 31))
        track = (options or {}).get("track")
        obs = client.reset(self._handle, seed=seed, track=track)
        return obs, {}

    def step(self, action):
        return client.step(self._handle, action)

    def close(self):
        self._handle.close()
