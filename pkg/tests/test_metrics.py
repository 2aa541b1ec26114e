import math

import numpy as np
import pytest
from shapely.geometry import box

from cavmarl.env import MetaAction, step
from cavmarl.metrics import (EpisodeTrace, TraceFormatError, compute_pet, export_traces, load_traces, mean_pet,
                             read_metrics_csv, read_trace, speed_accel_stats, success_rate, write_trace)

from scenes import linear_trace, make_world, route

ZONES = {("A", "B"): box(-2, -2, 2, 2), ("B", "A"): box(-2, -2, 2, 2)}


def _outcomes(*names):
    return [EpisodeTrace({"outcome": o, "cav_ids": [], "seed": 0}) for o in names]


def test_success_rate_examples():
    assert success_rate(_outcomes("success", "success")) == 1.0
    assert success_rate(_outcomes("success", "success", "collision", "success")) == 0.75
    with pytest.raises(ValueError):
        success_rate([])


def test_success_rate_monotone():
    base = _outcomes("success", "timeout", "collision")
    r = success_rate(base)
    assert success_rate(base + _outcomes("success")) >= r >= success_rate(base + _outcomes("timeout"))


def _crossing_trace(t_exit=3.0, t_enter=5.5, ids=(0, 1)):
    a, b = ids
    return linear_trace({a: ("A", lambda t: 2.0 * (t - t_exit) + 4.5, lambda t: 0.0, 0.0),
                         b: ("B", lambda t: 0.0, lambda t: -4.5 + 2.0 * (t - t_enter), math.pi / 2)},
                        cavs=ids)


def test_pet_hand_trace():
    samples = compute_pet(_crossing_trace(), ZONES)
    assert len(samples) == 1
    assert (samples[0].leader, samples[0].follower) == (0, 1)
    assert abs(samples[0].pet - 2.5) < 1e-9


def test_pet_needs_a_cav():
    assert compute_pet(_crossing_trace(), ZONES, cav_ids=[]) == []
    assert len(compute_pet(_crossing_trace(), ZONES, cav_ids=[1])) == 1


def test_pet_relabeling_invariant():
    a = compute_pet(_crossing_trace(), ZONES)
    b = compute_pet(_crossing_trace(ids=(7, 3)), ZONES)
    assert [s.pet for s in a] == pytest.approx([s.pet for s in b], abs=1e-12)
    assert (b[0].leader, b[0].follower) == (7, 3)


def test_pet_time_reversal_swaps_roles():
    tr = _crossing_trace()
    t_end = tr.records[-1]["time"]
    rev = EpisodeTrace(dict(tr.header), [
        {**rec, "time": round(t_end - rec["time"], 10),
         "vehicles": [[r[0], r[1], r[2], r[3] + math.pi, *r[4:]] for r in rec["vehicles"]]}
        for rec in reversed(tr.records)])
    fwd, back = compute_pet(tr, ZONES), compute_pet(rev, ZONES)
    assert back[0].pet == pytest.approx(fwd[0].pet, abs=1e-9)
    assert (back[0].leader, back[0].follower) == (fwd[0].follower, fwd[0].leader)


def test_overlapping_occupancy_gives_no_sample():
    assert compute_pet(_crossing_trace(3.0, 2.0), ZONES) == []


def test_parallel_routes_give_no_sample():
    tr = linear_trace({0: ("A", lambda t: 2.0 * t - 10, lambda t: 0.0, 0.0),
                       1: ("C", lambda t: 2.0 * t - 10, lambda t: 4.0, 0.0)})
    assert compute_pet(tr, ZONES) == [] and math.isnan(mean_pet([]))


def _speed_trace(v):
    tr = linear_trace({0: ("A", lambda t: v * t, lambda t: 0.0, 0.0)}, t_end=3.0, cavs=(0,))
    for rec in tr.records:
        rec["vehicles"][0][4] = v
    tr.header["substeps"] = 10
    return tr


def test_speed_series():
    flat = speed_accel_stats([_speed_trace(5.0)])
    assert np.array_equal(flat["mean_speed"], np.full(4, 5.0))
    both = speed_accel_stats([_speed_trace(4.0), _speed_trace(6.0)])
    assert np.array_equal(both["mean_speed"], np.full(4, 5.0))


def test_idle_cav_has_settled_acceleration():
    world = make_world([{"route": route("S"), "s": 5.0, "v": 6.0, "target": 6.0}])
    while not world.episode_done:
        step(world, {0: MetaAction.IDLE})
    tr = EpisodeTrace({"cav_ids": [0], "substeps": world.cfg.substeps, "outcome": "success", "seed": 0}, world.log)
    assert np.abs(speed_accel_stats([tr])["mean_accel"]).max() < 0.05


def test_export_round_trip(tmp_path):
    traces = [_crossing_trace(), _crossing_trace(2.0, 6.0)]
    for k, tr in enumerate(traces):
        tr.header.update(episode=k, collided=[], arrived=[0, 1], decision_steps=10, mean_reward=1.0)
    files = export_traces(traces, tmp_path, ZONES)
    back = load_traces(tmp_path)
    assert [t.header for t in back] == [t.header for t in traces]
    assert [t.records for t in back] == [t.records for t in traces]
    rows = read_metrics_csv(files["metrics"])
    assert len(rows) == 2
    for row, tr in zip(rows, back):
        assert float(row["mean_pet"]) == mean_pet(compute_pet(tr, ZONES))
    summary = read_metrics_csv(files["summary"])[0]
    assert float(summary["success_rate"]) == 1.0


def test_trace_schema_checked(tmp_path):
    path = write_trace(_crossing_trace(), tmp_path / "t.jsonl")
    text = path.read_text().replace('"version": 1', '"version": 2', 1)
    (tmp_path / "v2.jsonl").write_text(text)
    with pytest.raises(TraceFormatError, match="version"):
        read_trace(tmp_path / "v2.jsonl")
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(TraceFormatError):
        read_trace(tmp_path / "empty.jsonl")
    with pytest.raises(OSError, match="missing"):
        read_trace(tmp_path / "missing.jsonl")
