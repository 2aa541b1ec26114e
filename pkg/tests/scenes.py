"""Hand-placed worlds and small numeric oracles shared by the tests."""

from __future__ import annotations

import numpy as np

from cavmarl.behavior import style_params
from cavmarl.env import ScenarioConfig, Vehicle, WorldState, _state_on_route, get_network, log_record
from cavmarl.metrics import EpisodeTrace


def route(entry: str, movement: str = "straight", lane: int = 0, lanes: int = 1):
    return get_network(lanes).route_for(entry, lane, movement)


def conflict_s(ra, rb, lanes: int = 1) -> tuple[float, float]:
    """Arc positions of the conflict-zone centroid on both routes."""
    zone = get_network(lanes).zone(ra.key, rb.key)
    c = zone.centroid
    return ra.project(c.x, c.y)[0], rb.project(c.x, c.y)[0]


def make_world(specs, lanes: int = 1, **cfg_kw) -> WorldState:
    """World with vehicles placed by hand.

    Each spec is a dict with ``kind`` (CAV or HV), ``route``, arc position ``s``,
    speed ``v`` and optionally ``target`` (CAV) or ``v0`` / ``style`` (HV).
    """
    cfg = ScenarioConfig(lanes_per_approach=lanes, **cfg_kw)
    vehicles = []
    for vid, sp in enumerate(specs):
        st = _state_on_route(sp["route"], sp["s"], sp["v"])
        if sp.get("kind", "CAV") == "CAV":
            vehicles.append(Vehicle(vid, "CAV", st, sp["route"], target_speed=sp.get("target", sp["v"])))
        else:
            style = style_params(sp.get("style", "Normal"))
            v0 = sp.get("v0", 8.5)
            vehicles.append(Vehicle(vid, "HV", st, sp["route"], target_speed=v0,
                                    idm=style.with_desired_speed(v0), mobil=style.mobil, style=style.name.value))
    world = WorldState(cfg, get_network(lanes), vehicles)
    world.done_flags = {v.id: False for v in vehicles if v.kind == "CAV"}
    world.log.append(log_record(world))
    return world


def central_fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (perturbs ``x`` in place)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f()
        flat[k] = old - h
        down = f()
        flat[k] = old
        gf[k] = (up - down) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8)
    return float(num / den)


def linear_trace(tracks, dt: float = 0.1, t_end: float = 10.0, cavs=(0, 1)) -> EpisodeTrace:
    """Trace of vehicles moving on closed-form paths; tracks map id -> (route key, x(t), y(t), psi)."""
    recs = []
    for k in range(int(round(t_end / dt)) + 1):
        t = k * dt
        rows = [[vid, fx(t), fy(t), psi, 2.0, 0.0, "active", key] for vid, (key, fx, fy, psi) in tracks.items()]
        recs.append({"sim_step": k, "time": round(t, 10), "vehicles": rows})
    return EpisodeTrace({"cav_ids": list(cavs), "outcome": "success", "seed": 0}, recs)
