import json
import math
from dataclasses import replace

import numpy as np
import pytest

from cavmarl.env import (MetaAction, ScenarioConfig, check_collision, get_network, observe, reward,
                         spawn_episode, step)
from cavmarl.network import MOVEMENTS

from scenes import make_world, route


def _place(world, vid, x, y, psi=0.0, v=None):
    veh = world.vehicle(vid)
    veh.state = replace(veh.state, x=x, y=y, psi=psi, v=veh.state.v if v is None else v)


def test_single_lane_network_has_twelve_routes():
    net = get_network(1)
    assert len(net.routes) == 12
    assert {(e, m) for e in "NESW" for m in MOVEMENTS} == {(r.entry, r.movement) for r in net.routes.values()}


def test_parallel_lanes_share_no_zone():
    net = get_network(2)
    a, b = net.route_for("S", 0, "straight"), net.route_for("S", 1, "straight")
    assert net.zone(a.key, b.key) is None


def test_crossing_routes_share_a_zone():
    net = get_network(1)
    assert net.zone(route("S").key, route("W").key) is not None


def test_cav_only_spawn_has_four_cavs():
    world = spawn_episode(ScenarioConfig(), 3)
    assert [v.kind for v in world.vehicles] == ["CAV"] * 4


def test_spawn_is_deterministic():
    cfg = ScenarioConfig(hv_mode="heterogeneous", hv_count=(2, 6))
    a, b = spawn_episode(cfg, 17), spawn_episode(cfg, 17)
    assert json.dumps(a.log) == json.dumps(b.log)


def test_heterogeneous_styles_vary():
    cfg = ScenarioConfig(hv_mode="heterogeneous", hv_count=(6, 6))
    styles = set()
    for seed in range(20):
        styles |= {v.style for v in spawn_episode(cfg, seed).vehicles if v.kind == "HV"}
    assert styles == {"Aggressive", "Normal", "Timid"}


def test_homogeneous_uses_one_style():
    cfg = ScenarioConfig(hv_mode="homogeneous", hv_count=(6, 6), hv_style="Timid")
    world = spawn_episode(cfg, 2)
    assert {v.style for v in world.vehicles if v.kind == "HV"} == {"Timid"}


def test_ego_alone_observation():
    world = make_world([{"route": route("S"), "s": 10.0, "v": 5.0}])
    obs = observe(world, 0)
    assert obs.mask.tolist() == [True] + [False] * 7
    assert np.any(obs.rows[0] != 0) and not np.any(obs.rows[1:])


def test_perception_boundary():
    eps = 1e-6
    world = make_world([{"route": route("S"), "s": 10.0, "v": 5.0}] * 3)
    _place(world, 0, 0.0, 0.0)
    _place(world, 1, 50.0 + eps, 0.0)
    _place(world, 2, 0.0, -(50.0 - eps))
    assert observe(world, 0).ids == [0, 2]


def test_nearest_vehicles_kept():
    rng = np.random.default_rng(0)
    n = 8 + 3
    world = make_world([{"route": route("S"), "s": 10.0, "v": 5.0}] * n)
    pts = rng.uniform(-30, 30, size=(n, 2))
    for vid, (x, y) in enumerate(pts):
        _place(world, vid, x, y)
    d = np.hypot(*(pts[1:] - pts[0]).T)
    expect = [0] + [int(k) + 1 for k in np.argsort(d)[:7]]
    assert observe(world, 0).ids == expect


def test_reward_examples():
    world = make_world([{"route": route("S"), "s": 10.0, "v": 6.0}])
    assert reward(world, 0, {"collided": [0]}) == pytest.approx(-9.5, abs=1e-12)
    _place(world, 0, 0.0, 0.0, v=3.0)
    assert reward(world, 0, {}) == 0.0
    _place(world, 0, 0.0, 0.0, v=9.0)
    assert reward(world, 0, {"arrived": [0]}) == 6.0


def test_collision_examples():
    world = make_world([{"route": route("S"), "s": 10.0, "v": 0.0}] * 2)
    _place(world, 0, 0.0, 0.0)
    _place(world, 1, 0.0, 0.0)
    assert check_collision(world) == {frozenset((0, 1))}
    _place(world, 1, 0.0, 2.1)
    assert check_collision(world) == set()
    _place(world, 1, 0.0, 1.9)
    assert check_collision(world) == {frozenset((0, 1))}
    _place(world, 1, 3.0, 0.0, psi=math.pi / 2)
    assert check_collision(world) == {frozenset((0, 1))}


def test_idle_far_apart_never_collide():
    specs = [{"route": route(e), "s": 5.0, "v": 5.0} for e in "SN"]
    world = make_world(specs)
    total = []
    while not world.episode_done:
        _, _, _, _, events = step(world, {0: MetaAction.IDLE, 1: MetaAction.IDLE})
        total += events["collisions"]
    assert total == [] and all(world.done_flags.values())


def test_overlapping_vehicles_collide_and_freeze():
    r = route("S")
    world = make_world([{"route": r, "s": 20.0, "v": 5.0}, {"route": r, "s": 21.0, "v": 5.0}])
    _, _, rewards, dones, events = step(world, {0: 1, 1: 1})
    assert world.log[1].get("collisions") == [[0, 1]]
    assert events["collided"] == [0, 1] and dones == {0: True, 1: True}
    assert all(v.state.v == 0.0 and v.status == "collided" for v in world.vehicles)
    # actions for done agents are ignored
    step(world, {0: 2, 1: 2})
    assert "actions" in world.log[-10] and world.log[-10]["actions"] == {}


def test_replay_is_bitwise_identical():
    cfg = ScenarioConfig(hv_mode="heterogeneous", hv_count=(2, 4))
    logs = []
    for _ in range(2):
        world = spawn_episode(cfg, 9)
        rng = np.random.default_rng(1)
        while not world.episode_done:
            step(world, {c: int(rng.integers(3)) for c in world.cav_ids})
        logs.append(json.dumps(world.log))
    assert logs[0] == logs[1]


def test_bad_hv_mode_rejected():
    with pytest.raises(ValueError):
        ScenarioConfig(hv_mode="crowd")
