"""Two CAVs timed to meet at a crossing, with and without the safety inspector.

Both cars hold their speed (IDLE). The inspector predicts five decision steps
ahead, counts conflict points and swaps a conflicting proposal for the
meta-action that removes the most of them.

    python demos/crossing_inspector.py
"""

from __future__ import annotations

from cavmarl.env import ScenarioConfig, Vehicle, WorldState, _state_on_route, get_network, log_record, step
from cavmarl.game_prior import rank_levels
from cavmarl.inspector import InspectorConfig, correct_actions

NAMES = {0: "SLOWER", 1: "IDLE", 2: "FASTER"}


def crossing_world(d_south: float, d_west: float, v: float = 5.0) -> WorldState:
    net = get_network(1)
    south, west = net.route_for("S", 0, "straight"), net.route_for("W", 0, "straight")
    zone = net.zone(south.key, west.key).centroid
    s0, w0 = south.project(zone.x, zone.y)[0], west.project(zone.x, zone.y)[0]
    cars = [Vehicle(0, "CAV", _state_on_route(south, s0 - d_south, v), south, target_speed=v),
            Vehicle(1, "CAV", _state_on_route(west, w0 - d_west, v), west, target_speed=v)]
    world = WorldState(ScenarioConfig(), net, cars)
    world.done_flags = {0: False, 1: False}
    world.log.append(log_record(world))
    return world


def run(world: WorldState, inspector: bool) -> list:
    rank = rank_levels({0: 0.7, 1: 0.3})
    collisions = []
    while not world.episode_done:
        actions = {c: 1 for c in world.cav_ids if not world.done_flags[c]}
        if inspector:
            actions = correct_actions(world, actions, rank, InspectorConfig())
        _, _, _, _, events = step(world, actions)
        collisions += events["collisions"]
    return collisions


def main():
    world = crossing_world(24.0, 20.0)
    rec = {}
    got = correct_actions(world, {0: 1, 1: 1}, rank_levels({0: 0.7, 1: 0.3}), InspectorConfig(), rec)
    print(f"joint conflict index before correction: {rec['ci_before']}, after: {rec['ci_after']}")
    for agent in rec["agents"]:
        table = ", ".join(f"{NAMES[int(a)]} {v:+d}" for a, v in agent["sed"].items())
        print(f"  CAV {agent['agent']}: proposed {NAMES[agent['proposed']]}, "
              f"chose {NAMES[agent['corrected']]} (conflicts removed: {table})")
    print(f"corrected actions: { {k: NAMES[v] for k, v in got.items()} }")
    for flag in (False, True):
        hits = run(crossing_world(24.0, 20.0), flag)
        print(f"inspector {'on ' if flag else 'off'}: {len(hits)} collision events {hits}")


if __name__ == "__main__":
    main()
