"""Remote-environment client for trackforge servers, registered as
``Trackforge-v0`` with gymnasium."""

from gymnasium.envs.registration import register

from .client import (EnvSpec, ProtocolError, RemoteEnvHandle, ServerError,
                     connect, reset, step)
from .gym_env import TrackforgeRemoteEnv

__version__ = "0.1.0"

register(id="Trackforge-v0",
         entry_point="trackforge_adapter.gym_env:TrackforgeRemoteEnv")

__all__ = ["EnvSpec", "ProtocolError", "RemoteEnvHandle", "ServerError",
           "TrackforgeRemoteEnv", "connect", "reset", "step"]
