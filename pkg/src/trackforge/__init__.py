"""trackforge: procedural 2D racing tracks, lidar-equipped bicycle-model
simulation with domain randomization, and PPO training on raw lidar + odometry."""

__version__ = "0.1.0"

from .dynamics import Action, VehicleConfig, VehicleState
from .env import EpisodeConfig, RacingEnv, StepResult
from .frenet import CenterlineIndex, FrenetPose, build_index, from_frenet, to_frenet
from .sensors import LidarConfig, scan_lidar
from .trackgen import (TrackGenConfig, TrackMap, generate_track, load_map,
                       place_obstacles, save_map, validate_track)

__all__ = [
    "Action", "VehicleConfig", "VehicleState",
    "EpisodeConfig", "RacingEnv", "StepResult",
    "CenterlineIndex", "FrenetPose", "build_index", "from_frenet", "to_frenet",
    "LidarConfig", "scan_lidar",
    "TrackGenConfig", "TrackMap", "generate_track", "load_map",
    "place_obstacles", "save_map", "validate_track",
]
