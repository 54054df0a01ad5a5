"""Adapter acceptance: wire loopback equality and the environment checker."""
import gymnasium as gym
import numpy as np

import trackforge_adapter as tfa
from trackforge.dynamics import Action
from trackforge.env import RacingEnv

from conftest import LIDAR


def report(name, detail):
    print(f"\nACCEPTANCE PASS {name}: {detail}")


def test_wire_adapter_loopback_200_steps(server, pool):
    handle = tfa.connect("127.0.0.1", server.port)
    remote_obs = tfa.reset(handle, seed=33)

    env = RacingEnv(lidar=LIDAR)
    local_obs = env.reset(33, pool[33 % len(pool)])
    np.testing.assert_array_equal(remote_obs, local_obs)

    rng = np.random.default_rng(0)
    checked = 0
    for t in range(200):
        a = rng.uniform(-0.4, 0.4, size=2)
        a[0] = abs(a[0]) - 0.7
        obs, reward, terminated, truncated, info = tfa.step(handle, a)
        local = env.step(Action(float(a[0]), float(a[1])))
        np.testing.assert_array_equal(obs, local.observation)
        assert reward == local.reward
        assert (terminated or truncated) == local.done
        checked += 1
        if local.done:
            seed = 1000 + t
            remote_obs = tfa.reset(handle, seed=seed)
            local_obs = env.reset(seed, pool[seed % len(pool)])
            np.testing.assert_array_equal(remote_obs, local_obs)
    handle.close()
    report("adapter-loopback", f"{checked} steps bit-identical in "
           "observations, rewards, and done flags")


def test_environment_checker_on_registered_id(server):
    env = gym.make("Trackforge-v0", host="127.0.0.1", port=server.port)
    try:
        from gymnasium.utils.env_checker import check_env
        check_env(env.unwrapped, skip_render_check=True)
    finally:
        env.close()
    report("adapter-env-checker", "gymnasium check_env passed on Trackforge-v0")
