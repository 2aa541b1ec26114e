"""Kinematic bicycle model and the low-level controllers that drive it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

MIN_SPEED_DIV = 0.1  # speed floor used inside divisions (m/s)

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0


def wrap_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


def _clip(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


@dataclass(frozen=True, slots=True)
class VehicleState:
    x: float  # m
    y: float  # m
    v: float  # forward speed, m/s
    psi: float  # heading, rad
    lane_id: str = ""
    s: float = 0.0  # arc length along route, m


@dataclass(frozen=True)
class ControlGains:
    kp_lat: float = 3.0
    kp_psi: float = 30.0
    kp_v: float = 1.0
    wheelbase_l: float = 2.5

    def __post_init__(self):
        for name in ("kp_lat", "kp_psi", "kp_v", "wheelbase_l"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class ControlLimits:
    a_min: float = -5.0
    a_max: float = 3.0
    steer_max: float = math.pi / 4


class ControlCommand(NamedTuple):
    accel: float
    steer: float


class LaneRef(NamedTuple):
    """Lane geometry seen from the vehicle: signed offset (left positive) and lane heading."""

    offset: float
    heading: float


def lateral_heading_control(state: VehicleState, lane_ref: LaneRef, gains: ControlGains,
                            limits: ControlLimits = ControlLimits()) -> float:
    """Front-wheel angle from the cascaded lateral-position / heading controller."""
    v = max(state.v, MIN_SPEED_DIV)
    v_lat = -gains.kp_lat * lane_ref.offset
    dpsi = math.asin(_clip(v_lat / v, -1.0, 1.0))
    psi_ref = lane_ref.heading + dpsi
    yaw_rate = gains.kp_psi * wrap_angle(psi_ref - state.psi)
    steer = math.asin(_clip(0.5 * gains.wheelbase_l / v * yaw_rate, -1.0, 1.0))
    return _clip(steer, -limits.steer_max, limits.steer_max)


def speed_control(state: VehicleState, target_speed: float, gains: ControlGains,
                  limits: ControlLimits = ControlLimits()) -> float:
    if target_speed < 0:
        raise ValueError(f"target_speed must be >= 0, got {target_speed}")
    return _clip(gains.kp_v * (target_speed - state.v), limits.a_min, limits.a_max)


def bicycle_step(state: VehicleState, cmd: ControlCommand, dt: float,
                 wheelbase_l: float = 2.5) -> VehicleState:
    """Advance one explicit step of the kinematic bicycle model.

    Translation uses the mean of the old and new (non-negative) speed, so a
    straight run under piecewise-constant acceleration lands exactly on the
    closed-form position.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    beta = math.atan(0.5 * math.tan(cmd.steer))
    v_new = state.v + cmd.accel * dt
    if v_new < 0.0:
        v_new = 0.0
    v_mid = 0.5 * (state.v + v_new)
    heading = state.psi + beta
    x = state.x + v_mid * math.cos(heading) * dt
    y = state.y + v_mid * math.sin(heading) * dt
    psi = wrap_angle(state.psi + v_mid / wheelbase_l * math.sin(beta) * dt)
    return VehicleState(x, y, v_new, psi, state.lane_id, state.s + v_mid * dt)
