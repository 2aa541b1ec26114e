"""Priority-ordered safety inspection of proposed CAV meta-actions.

Every vehicle's motion over the next few decision steps is predicted; a CAV
whose proposal leads into predicted conflicts may swap it for the meta-action
that removes the most conflict points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .behavior import idm_acceleration
from .dynamics import speed_control
from .env import MetaAction, Vehicle, WorldState, advance_vehicle, find_leader
from .game_prior import LevelRank


@dataclass(frozen=True)
class InspectorConfig:
    horizon: int = 5  # decision steps
    r_c: float = 4.0  # conflict radius, m
    dense: bool = True  # test every sim step inside a decision step, not only its end point

    def __post_init__(self):
        if self.horizon < 1 or not self.r_c > 0:
            raise ValueError("need horizon >= 1 and r_c > 0")


@dataclass(frozen=True)
class Trajectory:
    owner: int
    points: np.ndarray  # (T, 2) positions at the end of decision steps 1..T
    source: str  # cav_rollout | cav_committed | hv_idm | static
    max_speed: float = 0.0
    dense: np.ndarray | None = None  # (T, K, 2) sim-step positions; dense[:, -1] == points

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 2 or not np.all(np.isfinite(self.points)):
            raise ValueError("trajectory points must be a finite (T, 2) array")


@dataclass
class ConflictReport:
    ci: int
    pairs: list[tuple[int, int, int]] = field(default_factory=list)


def target_after(cav: Vehicle, action: MetaAction, world: WorldState) -> float:
    cfg = world.cfg
    delta = {MetaAction.SLOWER: -cfg.dv_cmd, MetaAction.IDLE: 0.0, MetaAction.FASTER: cfg.dv_cmd}[MetaAction(action)]
    return min(max(cav.target_speed + delta, 0.0), cfg.v_cmd_max)


def static_trajectory(veh: Vehicle, horizon: int, substeps: int = 1) -> Trajectory:
    pts = np.tile([veh.state.x, veh.state.y], (horizon, 1))
    return Trajectory(veh.id, pts, "static", 0.0, np.repeat(pts[:, None, :], substeps, axis=1))


def rollout_cav(world: WorldState, agent_id: int, action: int, horizon: int = 5) -> Trajectory:
    """Hold the meta-action's target speed and run the vehicle's own controllers; nobody else moves."""
    cav = world.vehicle(agent_id)
    cfg = world.cfg
    if not cav.active:
        return static_trajectory(cav, horizon, cfg.substeps)
    target = target_after(cav, action, world)
    state = cav.state
    dense = np.empty((horizon, cfg.substeps, 2))
    vmax = state.v
    offset = cav.offset
    for k in range(horizon):
        for j in range(cfg.substeps):
            acc = speed_control(state, target, cfg.gains, cfg.limits)
            state, _, offset = advance_vehicle(state, cav.route, acc, cfg, offset)
            vmax = max(vmax, state.v)
            dense[k, j] = state.x, state.y
    return Trajectory(agent_id, dense[:, -1].copy(), "cav_rollout", vmax, dense)


def predict_hv(world: WorldState, vehicle_id: int, horizon: int = 5) -> Trajectory:
    """IDM forecast along the current route against leaders frozen at their current speed."""
    hv = world.vehicle(vehicle_id)
    if hv.kind != "HV":
        raise ValueError(f"vehicle {vehicle_id} is not an HV")
    cfg = world.cfg
    if not hv.active:
        return static_trajectory(hv, horizon, cfg.substeps)
    gap, v_lead = find_leader(world, hv)
    s, v = hv.state.s, hv.state.v
    arc = np.empty((horizon, cfg.substeps))
    vmax = v
    for k in range(horizon):
        for j in range(cfg.substeps):
            acc = idm_acceleration(v, gap, v - v_lead, hv.idm)
            v_new = max(v + acc * cfg.dt, 0.0)
            ds = 0.5 * (v + v_new) * cfg.dt
            s += ds
            if not math.isinf(gap):
                gap += v_lead * cfg.dt - ds
            v = v_new
            vmax = max(vmax, v)
            arc[k, j] = s
    dense = hv.route.points_at(arc)[..., :2]
    return Trajectory(vehicle_id, dense[:, -1].copy(), "hv_idm", vmax, dense)


def _step_distance(a: Trajectory, b: Trajectory, dense: bool) -> np.ndarray:
    """Per decision step centre distance; with ``dense`` the minimum over that step's sim steps."""
    if dense and a.dense is not None and b.dense is not None and a.dense.shape == b.dense.shape:
        return np.hypot(*np.moveaxis(a.dense - b.dense, -1, 0)).min(axis=1)
    return np.hypot(*(a.points - b.points).T)


def conflict_index(trajectories: Sequence[Trajectory], r_c: float = 4.0, dense: bool = False) -> ConflictReport:
    """Count (pair, step) combinations whose predicted centres come closer than ``r_c``.

    Each (pair, step) counts once. With ``dense`` a step is in conflict when any
    sim step inside it is, which catches vehicles that cross between decision points.
    """
    if not trajectories:
        return ConflictReport(0)
    horizon = trajectories[0].points.shape[0]
    if any(t.points.shape[0] != horizon for t in trajectories):
        raise ValueError("trajectories have different horizons")
    pairs = []
    for a, b in combinations(trajectories, 2):
        d = _step_distance(a, b, dense)
        for step in np.nonzero(d < r_c)[0]:
            pairs.append((min(a.owner, b.owner), max(a.owner, b.owner), int(step)))
    return ConflictReport(len(pairs), pairs)


def _own_conflicts(own: Trajectory, others: Sequence[Trajectory], r_c: float, dense: bool) -> int:
    return sum(int(np.count_nonzero(_step_distance(own, o, dense) < r_c)) for o in others)


def sed(world: WorldState, agent_id: int, action: int, alt_action: int,
        others: Sequence[Trajectory], cfg: InspectorConfig = InspectorConfig()) -> int:
    """Conflict points removed by executing ``alt_action`` instead of ``action``."""
    own_a = rollout_cav(world, agent_id, action, cfg.horizon)
    own_b = own_a if alt_action == action else rollout_cav(world, agent_id, alt_action, cfg.horizon)
    return (conflict_index([own_a, *others], cfg.r_c, cfg.dense).ci
            - conflict_index([own_b, *others], cfg.r_c, cfg.dense).ci)


def initial_trajectories(world: WorldState, proposals: Mapping[int, int],
                         cfg: InspectorConfig) -> dict[int, Trajectory]:
    out = {}
    for veh in world.vehicles:
        if not veh.present:
            continue
        if veh.kind == "HV":
            out[veh.id] = predict_hv(world, veh.id, cfg.horizon)
        elif veh.active and veh.id in proposals:
            out[veh.id] = rollout_cav(world, veh.id, proposals[veh.id], cfg.horizon)
        else:
            out[veh.id] = static_trajectory(veh, cfg.horizon, world.cfg.substeps)
    return out


def processing_order(cav_ids: Sequence[int], rank: LevelRank | None) -> list[int]:
    """CAVs by rank index; CAVs the ranking does not cover go last in id order."""
    ranked = rank.rank if rank is not None else {}
    return sorted(cav_ids, key=lambda c: (ranked.get(c, math.inf), c))


def correct_actions(world: WorldState, proposals: Mapping[int, int], rank: LevelRank | None,
                    cfg: InspectorConfig = InspectorConfig(), records: dict | None = None) -> dict[int, int]:
    """Sequentially replace conflicting proposals by the max-SED meta-action, highest priority first.

    When ``records`` is a dict it receives per-agent SED tables and the joint CI
    before and after correction.
    """
    trajs = initial_trajectories(world, proposals, cfg)
    corrected = dict(proposals)
    ci_before = conflict_index(list(trajs.values()), cfg.r_c, cfg.dense).ci if records is not None else 0
    for cid in processing_order([c for c in proposals if world.vehicle(c).active], rank):
        proposed = int(proposals[cid])
        own = trajs[cid]
        others = [t for vid, t in trajs.items() if vid != cid]
        ci_prop = _own_conflicts(own, others, cfg.r_c, cfg.dense)
        table = {proposed: 0}
        if ci_prop:
            candidates = {proposed: own}
            for a in MetaAction:
                if int(a) != proposed:
                    candidates[int(a)] = rollout_cav(world, cid, int(a), cfg.horizon)
            table = {a: ci_prop - _own_conflicts(t, others, cfg.r_c, cfg.dense) for a, t in candidates.items()}
            best = max(candidates, key=lambda a: (table[a], a == proposed, -candidates[a].max_speed, -a))
            corrected[cid] = best
            trajs[cid] = replace(candidates[best], source="cav_committed")
        else:
            trajs[cid] = replace(own, source="cav_committed")
        if records is not None:
            records.setdefault("agents", []).append(
                {"agent": cid, "proposed": proposed, "corrected": int(corrected[cid]),
                 "sed": {str(a): v for a, v in sorted(table.items())}})
    if records is not None:
        records["ci_before"] = ci_before
        records["ci_after"] = conflict_index(list(trajs.values()), cfg.r_c, cfg.dense).ci
    return corrected
