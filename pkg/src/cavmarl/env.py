"""Unsignalized-intersection POMDP: spawning, observation, reward and the joint step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .behavior import (
    STYLES, IdmParams, LaneContext, MobilParams, RoutedVehicle, StyleName,
    brake_from_poses, constant_speed_poses, forecast_times, idm_acceleration, mobil_decide, rect_overlap, style_params,
)
from .dynamics import (
    VEHICLE_LENGTH, VEHICLE_WIDTH, ControlCommand, ControlGains, ControlLimits, LaneRef,
    VehicleState, bicycle_step, lateral_heading_control, speed_control,
)
from .network import LANE_WIDTH, MOVEMENTS, RoadNetwork, Route, build_network

N_FEATURES = 6
CAV_ENTRY_ORDER = ("S", "W", "N", "E")
SCENARIO_LANES = {"single_lane": 1, "two_lane": 2, "three_lane": 3}


class MetaAction(IntEnum):
    SLOWER = 0
    IDLE = 1
    FASTER = 2


N_ACTIONS = len(MetaAction)


@dataclass(frozen=True)
class RewardConfig:
    w_c: float = 1.0
    w_e: float = 1.0
    w_a: float = 1.0
    c_e: float = 1.0
    v_min: float = 3.0
    v_max: float = 9.0
    collision_penalty: float = -10.0
    arrival_bonus: float = 5.0

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError("RewardConfig needs v_min < v_max")


@dataclass(frozen=True)
class ScenarioConfig:
    lanes_per_approach: int = 1
    hv_mode: str = "none"  # none | homogeneous | heterogeneous
    hv_count: tuple[int, int] = (0, 0)
    hv_style: str = "Normal"
    hv_v0_range: tuple[float, float] = (7.0, 10.0)
    cav_movement: str = "random"  # random | left | straight | right
    cav_offset_range: tuple[float, float] = (20.0, 50.0)
    dt: float = 0.1
    substeps: int = 10  # sim steps per decision
    horizon: int = 100  # decision steps
    n_cap: int = 8
    perception_range: float = 50.0
    dv_cmd: float = 1.5
    v_cmd_max: float = 10.0
    hv_brake_horizon: float = 3.0
    preview_time: float = 0.12
    spawn_retries: int = 50
    reward: RewardConfig = field(default_factory=RewardConfig)
    gains: ControlGains = field(default_factory=ControlGains)
    limits: ControlLimits = field(default_factory=ControlLimits)
    style_table: dict | None = None

    @property
    def decision_dt(self) -> float:
        return self.dt * self.substeps

    def __post_init__(self):
        if self.hv_mode not in ("none", "homogeneous", "heterogeneous"):
            raise ValueError(f"unknown hv_mode {self.hv_mode!r}")
        if self.hv_count[0] > self.hv_count[1] or self.hv_count[0] < 0:
            raise ValueError(f"bad hv_count range {self.hv_count}")


@dataclass
class Vehicle:
    id: int
    kind: str  # "CAV" | "HV"
    state: VehicleState
    route: Route
    target_speed: float = 0.0
    idm: IdmParams | None = None
    mobil: MobilParams | None = None
    style: str | None = None
    accel: float = 0.0
    steer: float = 0.0
    status: str = "active"  # active | collided | arrived
    offset: float | None = None  # cached lateral offset from the route, None when unknown

    @property
    def active(self) -> bool:
        return self.status == "active"

    @property
    def present(self) -> bool:
        """Physically on the road (arrived vehicles leave the network)."""
        return self.status != "arrived"

    def copy(self) -> "Vehicle":
        return replace(self)


@dataclass
class Observation:
    rows: np.ndarray  # (n_cap, 6)
    mask: np.ndarray  # (n_cap,) bool
    ids: list[int]  # vehicle id per filled row
    ego_row_index: int = 0


@dataclass
class WorldState:
    cfg: ScenarioConfig
    network: RoadNetwork
    vehicles: list[Vehicle]
    seed: int = 0
    time_step: int = 0
    sim_step: int = 0
    done_flags: dict[int, bool] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    @property
    def cav_ids(self) -> list[int]:
        return [v.id for v in self.vehicles if v.kind == "CAV"]

    def vehicle(self, vid: int) -> Vehicle:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)

    def snapshot(self) -> "WorldState":
        """Copy sharing the immutable network; vehicles are copied, the log is not."""
        return replace(self, vehicles=[v.copy() for v in self.vehicles],
                       done_flags=dict(self.done_flags), warnings=list(self.warnings), log=[])

    @property
    def episode_done(self) -> bool:
        cavs = self.cav_ids
        return all(self.done_flags.get(c, False) for c in cavs) or self.time_step >= self.cfg.horizon


_NETWORK_CACHE: dict[int, RoadNetwork] = {}


def get_network(lanes: int) -> RoadNetwork:
    if lanes not in _NETWORK_CACHE:
        _NETWORK_CACHE[lanes] = build_network(lanes)
    return _NETWORK_CACHE[lanes]


def _state_on_route(route: Route, s: float, v: float) -> VehicleState:
    x, y, psi = route.point_at(s)
    return VehicleState(x, y, v, psi, f"{route.entry}{route.lane}", s)


def _pick_route(net: RoadNetwork, rng: np.random.Generator, entry: str, movement: str) -> Route:
    if movement == "random":
        movement = MOVEMENTS[rng.integers(len(MOVEMENTS))]
    options = [r for r in net.routes_from(entry) if r.movement == movement]
    return options[rng.integers(len(options))]


def spawn_episode(cfg: ScenarioConfig, seed: int) -> WorldState:
    """Randomized initial world; a pure function of (cfg, seed)."""
    rng = np.random.default_rng(seed)
    net = get_network(cfg.lanes_per_approach)
    rw = cfg.reward
    vehicles: list[Vehicle] = []
    for vid, entry in enumerate(CAV_ENTRY_ORDER):
        route = _pick_route(net, rng, entry, cfg.cav_movement)
        offset = rng.uniform(*cfg.cav_offset_range)
        speed = rng.uniform(rw.v_min, rw.v_max)
        state = _state_on_route(route, route.stop_line_s - offset, speed)
        vehicles.append(Vehicle(vid, "CAV", state, route, target_speed=speed))

    world = WorldState(cfg, net, vehicles, seed=seed)
    if cfg.hv_mode != "none":
        lo, hi = cfg.hv_count
        n_hv = int(rng.integers(lo, hi + 1))
        placed = 0
        for k in range(n_hv):
            for _ in range(cfg.spawn_retries):
                entry = CAV_ENTRY_ORDER[rng.integers(4)]
                route = _pick_route(net, rng, entry, "random")
                s = rng.uniform(0.0, route.stop_line_s - 5.0)
                x, y, _ = route.point_at(s)
                if all(math.hypot(x - o.state.x, y - o.state.y) >= 2 * VEHICLE_LENGTH for o in vehicles):
                    break
            else:
                world.warnings.append(f"hv placement failed after {cfg.spawn_retries} retries; "
                                      f"reduced HV count from {n_hv} to {placed}")
                break
            if cfg.hv_mode == "homogeneous":
                style = style_params(cfg.hv_style, cfg.style_table)
            else:
                style = style_params(STYLES[rng.integers(len(STYLES))], cfg.style_table)
            v0 = rng.uniform(*cfg.hv_v0_range)
            speed = rng.uniform(rw.v_min, v0)
            vehicles.append(Vehicle(len(vehicles), "HV", _state_on_route(route, s, speed), route,
                                    target_speed=v0, idm=style.with_desired_speed(v0),
                                    mobil=style.mobil, style=style.name.value))
            placed += 1
    world.done_flags = {c: False for c in world.cav_ids}
    world.log.append(log_record(world))
    return world


def vehicle_features(state: VehicleState) -> tuple[float, ...]:
    return (state.x, state.y, state.v * math.cos(state.psi), state.v * math.sin(state.psi),
            math.cos(state.psi), math.sin(state.psi))


def observe(world: WorldState, agent_id: int) -> Observation:
    """Ego row in absolute coordinates followed by the nearest in-range vehicles relative to the ego."""
    cfg = world.cfg
    ego = world.vehicle(agent_id)
    rows = np.zeros((cfg.n_cap, N_FEATURES))
    mask = np.zeros(cfg.n_cap, dtype=bool)
    ef = vehicle_features(ego.state)
    rows[0] = ef
    mask[0] = True
    near = []
    for other in world.vehicles:
        if other.id == agent_id or not other.present:
            continue
        d = math.hypot(other.state.x - ego.state.x, other.state.y - ego.state.y)
        if d <= cfg.perception_range:
            near.append((d, other.id, other))
    near.sort(key=lambda item: (item[0], item[1]))
    ids = [agent_id]
    for row, (_, oid, other) in enumerate(near[: cfg.n_cap - 1], start=1):
        f = vehicle_features(other.state)
        rows[row] = (f[0] - ef[0], f[1] - ef[1], f[2] - ef[2], f[3] - ef[3], f[4], f[5])
        mask[row] = True
        ids.append(oid)
    return Observation(rows, mask, ids)


def reward(world: WorldState, agent_id: int, events: dict) -> float:
    rc = world.cfg.reward
    collided = agent_id in events.get("collided", ())
    arrived = agent_id in events.get("arrived", ())
    v = world.vehicle(agent_id).state.v
    r_c = rc.collision_penalty if collided else 0.0
    r_e = rc.c_e * min(max((v - rc.v_min) / (rc.v_max - rc.v_min), 0.0), 1.0)
    r_a = rc.arrival_bonus if arrived else 0.0
    return rc.w_c * r_c + rc.w_e * r_e + rc.w_a * r_a


def check_collision(world: WorldState) -> set[frozenset[int]]:
    """Unordered id pairs whose footprints overlap; arrived vehicles are off the road."""
    present = [v for v in world.vehicles if v.present]
    pairs = set()
    reach = math.hypot(VEHICLE_LENGTH, VEHICLE_WIDTH)
    for i, a in enumerate(present):
        for b in present[i + 1:]:
            if abs(a.state.x - b.state.x) > reach or abs(a.state.y - b.state.y) > reach:
                continue
            if rect_overlap(a.state.x, a.state.y, a.state.psi, b.state.x, b.state.y, b.state.psi):
                pairs.add(frozenset((a.id, b.id)))
    return pairs


# --- HV longitudinal / lateral helpers -------------------------------------------------

def _along_route(route: Route, ego_s: float, other: Vehicle, window: float = 60.0):
    """(gap, speed along route, ahead?) of ``other`` relative to a vehicle at ``ego_s`` on ``route``."""
    st = other.state
    ex, ey, _ = route.point_at(ego_s)
    if abs(st.x - ex) > window or abs(st.y - ey) > window:
        return None
    s_o, off, heading = route.project(st.x, st.y)
    if abs(off) >= VEHICLE_WIDTH or abs(s_o - ego_s) > window:
        return None
    v_along = st.v * math.cos(st.psi - heading)
    return s_o - ego_s, v_along


def find_leader(world: WorldState, veh: Vehicle, route: Route | None = None,
                s: float | None = None) -> tuple[float, float]:
    """Bumper gap and speed of the closest vehicle ahead within the route corridor."""
    route = route or veh.route
    s = veh.state.s if s is None else s
    best_gap, best_v = math.inf, 0.0
    for other in world.vehicles:
        if other.id == veh.id or not other.present:
            continue
        hit = _along_route(route, s, other)
        if hit is None or hit[0] <= 0:
            continue
        gap = hit[0] - VEHICLE_LENGTH
        if gap < best_gap:
            best_gap, best_v = gap, hit[1]
    return best_gap, best_v


def _lane_context(world: WorldState, veh: Vehicle, route: Route) -> LaneContext:
    s, _, _ = route.project(veh.state.x, veh.state.y)
    lead = (math.inf, 0.0)
    follow = (math.inf, 0.0, None)
    for other in world.vehicles:
        if other.id == veh.id or not other.present:
            continue
        hit = _along_route(route, s, other)
        if hit is None:
            continue
        ds, v_along = hit
        if ds > 0:
            if ds - VEHICLE_LENGTH < lead[0]:
                lead = (ds - VEHICLE_LENGTH, v_along)
        elif -ds - VEHICLE_LENGTH < follow[0]:
            follow = (-ds - VEHICLE_LENGTH, v_along, other.idm)
    return LaneContext(lead[0], lead[1], follow[0], follow[1], follow[2])


def _mobil_lane_change(world: WorldState, veh: Vehicle) -> Route | None:
    route = veh.route
    n = world.network.lanes_per_approach
    if n == 1 or route.movement != "straight" or veh.state.s > route.stop_line_s - 10.0:
        return None
    current = _lane_context(world, veh, route)
    best, best_gain = None, -math.inf
    for lane in (route.lane - 1, route.lane + 1):
        if not 0 <= lane < n:
            continue
        target_route = world.network.route_for(route.entry, lane, "straight")
        target = _lane_context(world, veh, target_route)
        if mobil_decide(veh.state.v, current, target, veh.mobil, veh.idm):
            gain = idm_acceleration(veh.state.v, target.leader_gap, veh.state.v - target.leader_speed, veh.idm)
            if gain > best_gain:
                best, best_gain = target_route, gain
    return best


def hv_acceleration(world: WorldState, veh: Vehicle, forecasts: dict[int, np.ndarray] | None = None) -> float:
    """IDM acceleration, overridden by the emergency brake when a forecast conflict exists."""
    gap, v_lead = find_leader(world, veh)
    acc = idm_acceleration(veh.state.v, gap, veh.state.v - v_lead, veh.idm)
    th = world.cfg.hv_brake_horizon
    if forecasts is None:
        forecasts = _forecasts(world)
    reach = (veh.state.v + world.cfg.v_cmd_max) * th + 2 * VEHICLE_LENGTH
    others, poses = [], []
    for o in world.vehicles:
        if o.id == veh.id or not o.present:
            continue
        if math.hypot(o.state.x - veh.state.x, o.state.y - veh.state.y) <= reach:
            others.append(o.state)
            poses.append(forecasts[o.id])
    if not others:
        return acc
    brake = brake_from_poses(veh.state, forecasts[veh.id], others, poses, veh.idm.b_hard)
    return acc if brake is None else min(acc, brake)


def _forecasts(world: WorldState) -> dict[int, np.ndarray]:
    t = forecast_times(world.cfg.hv_brake_horizon)
    return {v.id: constant_speed_poses(RoutedVehicle(v.state, v.route if v.active else None), t)
            for v in world.vehicles if v.present}


def advance_vehicle(veh_state: VehicleState, route: Route, accel: float, cfg: ScenarioConfig,
                    offset: float | None = None) -> tuple[VehicleState, float, float]:
    """One sim step of route following: steering from the lane controller, then the bicycle model.

    ``offset`` is the lateral offset returned by the previous call on the same
    route; passing it skips re-projecting the current pose. Returns the new
    state, the steering angle and the new lateral offset.
    """
    if offset is None:
        s, offset, _ = route.project(veh_state.x, veh_state.y)
    else:
        s = veh_state.s
    _, _, preview_heading = route.point_at(s + veh_state.v * cfg.preview_time)
    steer = lateral_heading_control(veh_state, LaneRef(offset, preview_heading), cfg.gains, cfg.limits)
    accel = min(max(accel, cfg.limits.a_min), cfg.limits.a_max)
    nxt = bicycle_step(veh_state, ControlCommand(accel, steer), cfg.dt, cfg.gains.wheelbase_l)
    s_new, off_new, _ = route.project(nxt.x, nxt.y)
    return VehicleState(nxt.x, nxt.y, nxt.v, nxt.psi, nxt.lane_id, s_new), steer, off_new


def _vehicle_row(v: Vehicle) -> list:
    st = v.state
    return [v.id, st.x, st.y, st.psi, st.v, v.accel, v.status, v.route.key]


def log_record(world: WorldState) -> dict:
    return {"sim_step": world.sim_step, "time": round(world.sim_step * world.cfg.dt, 10),
            "vehicles": [_vehicle_row(v) for v in world.vehicles if v.present]}


def step(world: WorldState, joint_actions: dict[int, int], info: dict | None = None):
    """Advance one decision step (``cfg.substeps`` sim steps) in place.

    Returns (world, observations, rewards, dones, events). Actions for agents
    that are already done are ignored.
    """
    cfg = world.cfg
    cavs = [world.vehicle(c) for c in world.cav_ids]
    executed = {}
    for cav in cavs:
        if world.done_flags[cav.id]:
            continue
        a = MetaAction(joint_actions.get(cav.id, MetaAction.IDLE))
        executed[cav.id] = int(a)
        delta = {MetaAction.SLOWER: -cfg.dv_cmd, MetaAction.IDLE: 0.0, MetaAction.FASTER: cfg.dv_cmd}[a]
        cav.target_speed = min(max(cav.target_speed + delta, 0.0), cfg.v_cmd_max)

    for hv in world.vehicles:
        if hv.kind == "HV" and hv.active:
            new_route = _mobil_lane_change(world, hv)
            if new_route is not None:
                hv.route = new_route
                hv.offset = None

    events = {"collided": [], "arrived": [], "collisions": []}
    for sub in range(cfg.substeps):
        accels = {}
        forecasts = _forecasts(world) if any(v.kind == "HV" and v.active for v in world.vehicles) else None
        for veh in world.vehicles:
            if not veh.active:
                continue
            if veh.kind == "HV":
                accels[veh.id] = hv_acceleration(world, veh, forecasts)
            else:
                accels[veh.id] = speed_control(veh.state, veh.target_speed, cfg.gains, cfg.limits)
        for veh in world.vehicles:
            if veh.id in accels:
                veh.state, veh.steer, veh.offset = advance_vehicle(veh.state, veh.route, accels[veh.id],
                                                                   cfg, veh.offset)
                veh.accel = min(max(accels[veh.id], cfg.limits.a_min), cfg.limits.a_max)
        world.sim_step += 1

        sub_events = []
        for pair in sorted(check_collision(world), key=sorted):
            a, b = (world.vehicle(i) for i in sorted(pair))
            if not (a.active or b.active):
                continue
            sub_events.append(sorted(pair))
            for veh in (a, b):
                if veh.active:
                    veh.status = "collided"
                    veh.state = replace(veh.state, v=0.0)
                    veh.accel = 0.0
                    if veh.kind == "CAV":
                        events["collided"].append(veh.id)
        events["collisions"].extend(sub_events)
        for veh in world.vehicles:
            if veh.active and veh.state.s >= veh.route.length:
                veh.status = "arrived"
                if veh.kind == "CAV":
                    events["arrived"].append(veh.id)

        record = log_record(world)
        if sub_events:
            record["collisions"] = sub_events
        if sub == 0:
            record["actions"] = {str(k): v for k, v in executed.items()}
            if info:
                record.update(info)
        world.log.append(record)

    world.time_step += 1
    rewards = {}
    for cav in cavs:
        if world.done_flags[cav.id]:
            rewards[cav.id] = 0.0
            continue
        rewards[cav.id] = reward(world, cav.id, events)
        if cav.status != "active":
            world.done_flags[cav.id] = True
    world.log[-1]["rewards"] = {str(k): v for k, v in rewards.items()}
    dones = dict(world.done_flags)
    obs = {c.id: observe(world, c.id) for c in cavs}
    return world, obs, rewards, dones, events


class IntersectionEnv:
    """Thin stateful wrapper around the functional world API."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.world: WorldState | None = None

    def reset(self, seed: int) -> dict[int, Observation]:
        self.world = spawn_episode(self.cfg, seed)
        return {c: observe(self.world, c) for c in self.world.cav_ids}

    def step(self, joint_actions: dict[int, int], info: dict | None = None):
        _, obs, rewards, dones, events = step(self.world, joint_actions, info)
        return obs, rewards, dones, events

    @property
    def done(self) -> bool:
        return self.world.episode_done
