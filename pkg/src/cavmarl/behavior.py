"""Human-driver behaviour: IDM car following, MOBIL lane changes, short-horizon emergency braking."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .dynamics import VEHICLE_LENGTH, VEHICLE_WIDTH, VehicleState


@dataclass(frozen=True)
class IdmParams:
    v0: float  # desired speed, m/s
    t_headway: float  # s
    d0: float  # jam distance, m
    a_max: float  # m/s^2
    b_comf: float  # m/s^2
    delta_exp: float = 4.0

    def __post_init__(self):
        for name in ("v0", "t_headway", "d0", "a_max", "b_comf", "delta_exp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IdmParams.{name} must be positive")

    @property
    def b_hard(self) -> float:
        return 2.0 * self.b_comf


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    b_safe: float = 4.0
    a_thresh: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.b_safe <= 0 or self.a_thresh < 0:
            raise ValueError("need b_safe > 0 and a_thresh >= 0")


class StyleName(str, Enum):
    AGGRESSIVE = "Aggressive"
    NORMAL = "Normal"
    TIMID = "Timid"


@dataclass(frozen=True)
class DrivingStyle:
    name: StyleName
    idm: IdmParams
    mobil: MobilParams

    def with_desired_speed(self, v0: float) -> IdmParams:
        return replace(self.idm, v0=v0)


# Calibrated car-following parameters per style (d0, T, a, b); v0 is drawn at spawn.
_STYLE_ROWS = {
    StyleName.AGGRESSIVE: (3.38, 0.86, 1.35, 2.07, 0.0),
    StyleName.NORMAL: (3.67, 1.14, 1.34, 2.06, 0.3),
    StyleName.TIMID: (3.69, 1.27, 1.36, 1.99, 0.5),
}
DEFAULT_V0 = 8.5


def style_params(name: StyleName | str, table: dict | None = None) -> DrivingStyle:
    """Driving style by name; ``table`` may override rows as {name: {d0, t_headway, a_max, b_comf, politeness}}."""
    name = StyleName(name)
    d0, t, a, b, pol = _STYLE_ROWS[name]
    if table and name.value in table:
        row = table[name.value]
        d0, t, a, b = row.get("d0", d0), row.get("t_headway", t), row.get("a_max", a), row.get("b_comf", b)
        pol = row.get("politeness", pol)
    return DrivingStyle(name, IdmParams(DEFAULT_V0, t, d0, a, b), MobilParams(politeness=pol))


STYLES = tuple(StyleName)


def idm_acceleration(v: float, d: float, dv: float, p: IdmParams) -> float:
    """IDM acceleration for gap ``d`` to the leader and approach rate ``dv = v - v_leader``.

    Pass ``d = inf`` when there is no leader. Gaps ``d <= 0`` mean overlap and
    return the emergency deceleration ``-2 b``.
    """
    if d <= 0:
        return -p.b_hard
    d_star = p.d0 + p.t_headway * v + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    if d_star < p.d0:
        d_star = p.d0
    interaction = 0.0 if math.isinf(d) else (d_star / d) ** 2
    acc = p.a_max * (1.0 - (v / p.v0) ** p.delta_exp - interaction)
    return min(max(acc, -p.b_hard), p.a_max)


class LaneContext(NamedTuple):
    """Neighbours of the ego in one lane. Gaps are bumper to bumper; ``inf`` when absent."""

    leader_gap: float = math.inf
    leader_speed: float = 0.0
    follower_gap: float = math.inf
    follower_speed: float = 0.0
    follower_idm: IdmParams | None = None


def _follower_terms(ctx: LaneContext, own_idm: IdmParams):
    return ctx.follower_idm or own_idm


def mobil_decide(v: float, current: LaneContext, target: LaneContext,
                 p: MobilParams, idm: IdmParams) -> bool:
    """MOBIL lane-change decision for an ego at speed ``v``."""
    length = VEHICLE_LENGTH
    has_new_follower = not math.isinf(target.follower_gap)
    has_old_follower = not math.isinf(current.follower_gap)

    acc_now = idm_acceleration(v, current.leader_gap, v - current.leader_speed, idm)
    acc_after = idm_acceleration(v, target.leader_gap, v - target.leader_speed, idm)

    new_gain = 0.0
    if has_new_follower:
        nf = _follower_terms(target, idm)
        vf = target.follower_speed
        new_after = idm_acceleration(vf, target.follower_gap, vf - v, nf)
        if new_after < -p.b_safe:
            return False
        gap_before = target.follower_gap + length + target.leader_gap
        new_before = idm_acceleration(vf, gap_before, vf - target.leader_speed, nf)
        new_gain = new_after - new_before

    old_gain = 0.0
    if has_old_follower:
        of = _follower_terms(current, idm)
        vf = current.follower_speed
        old_before = idm_acceleration(vf, current.follower_gap, vf - v, of)
        gap_after = current.follower_gap + length + current.leader_gap
        old_after = idm_acceleration(vf, gap_after, vf - current.leader_speed, of)
        old_gain = old_after - old_before

    incentive = acc_after - acc_now + p.politeness * (new_gain + old_gain)
    return incentive > p.a_thresh


def rect_overlap(x1, y1, p1, x2, y2, p2, length: float = VEHICLE_LENGTH,
                 width: float = VEHICLE_WIDTH):
    """Separating-axis overlap test for equal-size oriented rectangles; broadcasts over arrays.

    Touching edges do not count as overlap.
    """
    dx, dy = np.subtract(x2, x1), np.subtract(y2, y1)
    hl, hw = length / 2, width / 2
    c1, s1, c2, s2 = np.cos(p1), np.sin(p1), np.cos(p2), np.sin(p2)
    overlap = np.ones(np.broadcast(dx, dy, c1, c2).shape, dtype=bool)
    for ux, uy in ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2)):
        ext1 = hl * np.abs(ux * c1 + uy * s1) + hw * np.abs(-ux * s1 + uy * c1)
        ext2 = hl * np.abs(ux * c2 + uy * s2) + hw * np.abs(-ux * s2 + uy * c2)
        overlap &= np.abs(ux * dx + uy * dy) < ext1 + ext2
    return overlap


class RoutedVehicle(NamedTuple):
    state: VehicleState
    route: object  # network.Route


def constant_speed_poses(rv: RoutedVehicle, t: np.ndarray) -> np.ndarray:
    """(len(t), 3) poses at constant speed along the route; routeless vehicles stay put."""
    st = rv.state
    if rv.route is None or st.v == 0.0:
        return np.tile([st.x, st.y, st.psi], (len(t), 1))
    return rv.route.points_at(st.s + st.v * t)


def _is_behind(ego: VehicleState, other: VehicleState) -> bool:
    rel_long = (other.x - ego.x) * math.cos(ego.psi) + (other.y - ego.y) * math.sin(ego.psi)
    return rel_long < 0 and abs(math.remainder(other.psi - ego.psi, 2 * math.pi)) < math.pi / 4


def brake_from_poses(ego: VehicleState, ego_poses: np.ndarray, others: Sequence[VehicleState],
                     other_poses: Sequence[np.ndarray], b_hard: float) -> float | None:
    """Core of :func:`hv_safety_brake` on precomputed forecasts."""
    keep = [p for st, p in zip(others, other_poses) if not _is_behind(ego, st)]
    if not keep:
        return None
    poses = np.stack(keep)  # (m, T, 3)
    dx = poses[..., 0] - ego_poses[None, :, 0]
    dy = poses[..., 1] - ego_poses[None, :, 1]
    near = dx * dx + dy * dy < VEHICLE_LENGTH ** 2 + VEHICLE_WIDTH ** 2
    if not near.any():
        return None
    m_idx, t_idx = np.nonzero(near)
    hit = rect_overlap(ego_poses[t_idx, 0], ego_poses[t_idx, 1], ego_poses[t_idx, 2],
                       poses[m_idx, t_idx, 0], poses[m_idx, t_idx, 1], poses[m_idx, t_idx, 2])
    return -b_hard if hit.any() else None


def hv_safety_brake(ego: RoutedVehicle, others: Sequence[RoutedVehicle], horizon_th: float,
                    b_hard: float, dt: float = 0.25) -> float | None:
    """Emergency deceleration if a constant-speed forecast puts the ego into another footprint.

    Vehicles that sit behind the ego on a near-parallel heading are ignored:
    braking cannot resolve a conflict that comes from behind.
    """
    if horizon_th <= 0:
        raise ValueError("horizon_th must be positive")
    if not others:
        return None
    t = forecast_times(horizon_th, dt)
    return brake_from_poses(ego.state, constant_speed_poses(ego, t), [o.state for o in others],
                            [constant_speed_poses(o, t) for o in others], b_hard)


def forecast_times(horizon_th: float, dt: float = 0.25) -> np.ndarray:
    return np.arange(0.0, horizon_th + 1e-9, dt)
