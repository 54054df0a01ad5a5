"""Kinematic bicycle model with first-order speed lag and steering slew limit.

The pose (x, y) tracks the rear axle.  Actions arrive normalized in [-1, 1]
and are mapped affinely onto the physical speed and steering ranges; the
simulation then integrates explicit-Euler substeps at physics_dt while the
agent acts every control_dt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .geom import wrap_angle


@dataclass(frozen=True)
class VehicleConfig:
    wheelbase: float = 0.33
    width: float = 0.30
    length: float = 0.50
    speed_range: tuple[float, float] = (0.0, 6.0)
    steer_max: float = 0.4189
    speed_time_constant: float = 0.4
    steer_rate_max: float = 3.2
    physics_dt: float = 0.01
    control_dt: float = 0.1

    def validate(self) -> list[str]:
        errs = []
        if self.wheelbase <= 0 or self.width <= 0 or self.length <= 0:
            errs.append("wheelbase/width/length: must be positive")
        if not (0 <= self.speed_range[0] < self.speed_range[1]):
            errs.append("speed_range: must satisfy 0 <= min < max")
        if self.steer_max <= 0:
            errs.append("steer_max: must be positive")
        if self.speed_time_constant <= 0 or self.steer_rate_max <= 0:
            errs.append("speed_time_constant/steer_rate_max: must be positive")
        if self.physics_dt <= 0 or self.control_dt <= 0:
            errs.append("physics_dt/control_dt: must be positive")
        else:
            ratio = self.control_dt / self.physics_dt
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                errs.append("control_dt: must be an integer multiple of physics_dt")
        return errs

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))


@dataclass(frozen=True)
class Action:
    speed_cmd: float = 0.0
    steer_cmd: float = 0.0

    def clamped(self) -> "Action":
        return Action(min(max(self.speed_cmd, -1.0), 1.0),
                      min(max(self.steer_cmd, -1.0), 1.0))


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    steer: float = 0.0
    time: float = 0.0


def denormalize_action(action: Action, config: VehicleConfig) -> tuple[float, float]:
    """Map a normalized action to (speed target m/s, steer target rad)."""
    a = action.clamped()
    v_min, v_max = config.speed_range
    speed_target = v_min + 0.5 * (a.speed_cmd + 1.0) * (v_max - v_min)
    steer_target = a.steer_cmd * config.steer_max
    return speed_target, steer_target


def _substep(state: VehicleState, speed_target: float, steer_target: float,
             config: VehicleConfig, dt: float) -> VehicleState:
    d_steer = steer_target - state.steer
    rate_cap = config.steer_rate_max * dt
    steer = state.steer + min(max(d_steer, -rate_cap), rate_cap)
    steer = min(max(steer, -config.steer_max), config.steer_max)

    speed = state.speed + (speed_target - state.speed) * (dt / config.speed_time_constant)
    speed = min(max(speed, 0.0), config.speed_range[1])

    x = state.x + speed * math.cos(state.heading) * dt
    y = state.y + speed * math.sin(state.heading) * dt
    heading = wrap_angle(state.heading + speed * math.tan(steer) / config.wheelbase * dt)
    return VehicleState(x=x, y=y, heading=heading, speed=speed, steer=steer,
                        time=state.time + dt)


def step_dynamics(state: VehicleState, targets: tuple[float, float],
                  config: VehicleConfig) -> VehicleState:
    """Advance one control interval (substeps x physics_dt) toward the targets."""
    speed_target, steer_target = targets
    for _ in range(config.substeps):
        state = _substep(state, speed_target, steer_target, config, config.physics_dt)
    return state


def footprint_center(state: VehicleState, config: VehicleConfig) -> tuple[float, float]:
    """Geometric center of the collision rectangle (mid-wheelbase)."""
    half = 0.5 * config.wheelbase
    return (state.x + half * math.cos(state.heading),
            state.y + half * math.sin(state.heading))
