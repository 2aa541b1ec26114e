"""Episode traces and the safety / efficiency metrics computed from them.

A trace is a header dict plus one record per simulation step. Vehicle rows in
a record are ``[id, x, y, psi, v, accel, status, route]``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon

from .network import footprint_polygons

TRACE_SCHEMA = "cavmarl-trace"
METRICS_SCHEMA = "cavmarl-metrics"
SCHEMA_VERSION = 1
METRIC_COLUMNS = ("episode", "seed", "outcome", "success", "collisions", "arrivals", "steps",
                  "mean_reward", "pet_samples", "mean_pet", "mean_speed", "mean_abs_accel")
BISECT_ITERS = 50

ID, X, Y, PSI, V, ACC, STATUS, ROUTE = range(8)


class TraceFormatError(ValueError):
    pass


@dataclass
class EpisodeTrace:
    header: dict
    records: list[dict] = field(default_factory=list)

    @property
    def outcome(self) -> str:
        return self.header["outcome"]

    @property
    def cav_ids(self) -> list[int]:
        return self.header["cav_ids"]


@dataclass(frozen=True)
class PetSample:
    zone: str
    leader: int
    follower: int
    pet: float


# --- outcome metrics ------------------------------------------------------------------

def success_rate(traces: Sequence[EpisodeTrace]) -> float:
    if not traces:
        raise ValueError("success_rate needs at least one trace")
    return sum(t.outcome == "success" for t in traces) / len(traces)


def collision_count(trace: EpisodeTrace) -> int:
    """CAVs that ended the episode collided."""
    return len(trace.header.get("collided", []))


# --- PET -------------------------------------------------------------------------------

def _series(trace: EpisodeTrace) -> dict[int, dict]:
    """Per vehicle: times, poses (n, 3) and route keys over the records it appears in."""
    out: dict[int, dict] = {}
    for rec in trace.records:
        for row in rec["vehicles"]:
            s = out.setdefault(row[ID], {"t": [], "pose": [], "route": []})
            s["t"].append(rec["time"])
            s["pose"].append((row[X], row[Y], row[PSI]))
            s["route"].append(row[ROUTE] if len(row) > ROUTE else None)
    for s in out.values():
        s["t"] = np.asarray(s["t"], dtype=float)
        pose = np.asarray(s["pose"], dtype=float).reshape(-1, 3)
        pose[:, 2] = np.unwrap(pose[:, 2])
        s["pose"] = pose
    return out


def _footprint_at(p0: np.ndarray, p1: np.ndarray, alpha: float) -> Polygon:
    p = p0 + alpha * (p1 - p0)
    return footprint_polygons(p[0], p[1], p[2])[0]


def _crossing_time(s: dict, k: int, zone: Polygon, entering: bool) -> float:
    """Bisect the instant between samples k-1 and k where occupancy flips."""
    p0, p1 = s["pose"][k - 1], s["pose"][k]
    lo, hi = 0.0, 1.0  # occupancy at lo is the old state, at hi the new one
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        inside = zone.intersects(_footprint_at(p0, p1, mid))
        if inside == entering:
            hi = mid
        else:
            lo = mid
    t0, t1 = s["t"][k - 1], s["t"][k]
    return float(t0 + hi * (t1 - t0))


def occupancy_interval(s: dict, zone: Polygon) -> tuple[float, float] | None:
    """[entry, exit] of the vehicle's footprint in ``zone``; None if it never touches it."""
    polys = footprint_polygons(s["pose"][:, 0], s["pose"][:, 1], s["pose"][:, 2])
    occ = shapely.intersects(polys, zone)
    idx = np.nonzero(occ)[0]
    if idx.size == 0:
        return None
    first, last = int(idx[0]), int(idx[-1])
    entry = float(s["t"][0]) if first == 0 else _crossing_time(s, first, zone, True)
    exit_ = float(s["t"][-1]) if last == len(occ) - 1 else _crossing_time(s, last + 1, zone, False)
    return entry, exit_


def _zone_key(a: str, b: str) -> str:
    return "|".join(sorted((a, b)))


def compute_pet(trace: EpisodeTrace, zones: Mapping[tuple[str, str], Polygon],
                cav_ids: Iterable[int] | None = None) -> list[PetSample]:
    """PET samples for every vehicle pair with at least one CAV, in the conflict zone of their routes.

    Pairs whose occupancy intervals overlap give no sample.
    """
    cavs = set(trace.cav_ids if cav_ids is None else cav_ids)
    series = _series(trace)
    ids = sorted(series)
    cache: dict[tuple[int, str], tuple | None] = {}
    samples = []
    for n, i in enumerate(ids):
        for j in ids[n + 1:]:
            if i not in cavs and j not in cavs:
                continue
            route_pairs = {(a, b) for a in set(series[i]["route"]) for b in set(series[j]["route"])}
            for ra, rb in sorted(route_pairs, key=str):
                zone = zones.get((ra, rb)) if ra is not None and rb is not None else None
                if zone is None:
                    continue
                key = _zone_key(ra, rb)
                for vid in (i, j):
                    if (vid, key) not in cache:
                        cache[(vid, key)] = occupancy_interval(series[vid], zone)
                iv_i, iv_j = cache[(i, key)], cache[(j, key)]
                if iv_i is None or iv_j is None:
                    continue
                if iv_i[1] <= iv_j[0]:
                    samples.append(PetSample(key, i, j, iv_j[0] - iv_i[1]))
                elif iv_j[1] <= iv_i[0]:
                    samples.append(PetSample(key, j, i, iv_i[0] - iv_j[1]))
    return samples


def mean_pet(samples: Sequence[PetSample]) -> float:
    return float(np.mean([s.pet for s in samples])) if samples else math.nan


# --- speed / acceleration ---------------------------------------------------------------

def _decision_rows(trace: EpisodeTrace):
    """CAV rows at decision boundaries, keyed by decision step index."""
    sub = trace.header.get("substeps", 1)
    cavs = set(trace.cav_ids)
    for rec in trace.records:
        if rec["sim_step"] % sub:
            continue
        rows = [r for r in rec["vehicles"] if r[ID] in cavs and r[STATUS] == "active"]
        yield rec["sim_step"] // sub, rows


def speed_accel_stats(traces: Sequence[EpisodeTrace]) -> dict[str, np.ndarray]:
    """Mean CAV speed and commanded acceleration per decision step, across episodes and agents."""
    if not traces:
        raise ValueError("speed_accel_stats needs at least one trace")
    speed: dict[int, list] = {}
    accel: dict[int, list] = {}
    for tr in traces:
        for k, rows in _decision_rows(tr):
            for r in rows:
                speed.setdefault(k, []).append(r[V])
                accel.setdefault(k, []).append(r[ACC])
    steps = np.array(sorted(speed), dtype=int)
    return {"step": steps,
            "mean_speed": np.array([np.mean(speed[k]) for k in steps]),
            "mean_accel": np.array([np.mean(accel[k]) for k in steps]),
            "samples": np.array([len(speed[k]) for k in steps])}


def episode_summary(trace: EpisodeTrace, zones: Mapping | None = None) -> dict:
    pets = compute_pet(trace, zones) if zones is not None else []
    cavs = set(trace.cav_ids)
    v, a = [], []
    for rec in trace.records:
        for r in rec["vehicles"]:
            if r[ID] in cavs and r[STATUS] == "active":
                v.append(r[V])
                a.append(abs(r[ACC]))
    return {"episode": trace.header.get("episode", 0), "seed": trace.header["seed"],
            "outcome": trace.outcome, "success": int(trace.outcome == "success"),
            "collisions": collision_count(trace), "arrivals": len(trace.header.get("arrived", [])),
            "steps": trace.header.get("decision_steps", 0), "mean_reward": trace.header.get("mean_reward", math.nan),
            "pet_samples": len(pets), "mean_pet": mean_pet(pets),
            "mean_speed": float(np.mean(v)) if v else math.nan,
            "mean_abs_accel": float(np.mean(a)) if a else math.nan}


# --- export / import ---------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def trace_path(out_dir: Path, episode: int) -> Path:
    return out_dir / "traces" / f"episode_{episode:04d}.jsonl"


def write_trace(trace: EpisodeTrace, path: str | Path) -> Path:
    path = Path(path)
    header = {"schema": TRACE_SCHEMA, "version": SCHEMA_VERSION, **trace.header}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in trace.records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc}") from exc
    return path


def read_trace(path: str | Path) -> EpisodeTrace:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read trace {path}: {exc}") from exc
    if not lines:
        raise TraceFormatError(f"{path}: empty trace")
    header = json.loads(lines[0])
    if header.get("schema") != TRACE_SCHEMA:
        raise TraceFormatError(f"{path}: not a trace file")
    if header.get("version") != SCHEMA_VERSION:
        raise TraceFormatError(f"{path}: trace schema version {header.get('version')}, "
                               f"this build reads {SCHEMA_VERSION}")
    del header["schema"], header["version"]
    return EpisodeTrace(header, [json.loads(line) for line in lines[1:]])


def write_metrics_csv(rows: Sequence[dict], path: str | Path, columns: Sequence[str] = METRIC_COLUMNS):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write(f"# schema={METRICS_SCHEMA} version={SCHEMA_VERSION}\n")
            w = csv.writer(f)
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write metrics {path}: {exc}") from exc
    return path


def read_metrics_csv(path: str | Path) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as f:
        first = f.readline()
        if not first.startswith(f"# schema={METRICS_SCHEMA}"):
            raise TraceFormatError(f"{path}: not a metrics file")
        return list(csv.DictReader(f))


def summarize(rows: Sequence[dict]) -> dict:
    pets = [r["mean_pet"] for r in rows if not math.isnan(r["mean_pet"])]
    return {"episodes": len(rows), "success_rate": float(np.mean([r["success"] for r in rows])),
            "collisions": int(sum(r["collisions"] for r in rows)),
            "mean_pet": float(np.mean(pets)) if pets else math.nan,
            "mean_speed": float(np.nanmean([r["mean_speed"] for r in rows])),
            "mean_abs_accel": float(np.nanmean([r["mean_abs_accel"] for r in rows]))}


def export_traces(traces: Sequence[EpisodeTrace], out_dir: str | Path,
                  zones: Mapping | None = None) -> dict[str, Path]:
    """JSONL per episode, a per-episode metrics CSV and a one-row summary CSV."""
    out_dir = Path(out_dir)
    rows = []
    for k, tr in enumerate(traces):
        write_trace(tr, trace_path(out_dir, k))
        rows.append(episode_summary(tr, zones))
    metrics = write_metrics_csv(rows, out_dir / "metrics.csv")
    summary = write_metrics_csv([summarize(rows)] if rows else [], out_dir / "summary.csv",
                                ("episodes", "success_rate", "collisions", "mean_pet", "mean_speed",
                                 "mean_abs_accel"))
    return {"traces": out_dir / "traces", "metrics": metrics, "summary": summary}


def load_traces(out_dir: str | Path) -> list[EpisodeTrace]:
    files = sorted((Path(out_dir) / "traces").glob("episode_*.jsonl"))
    return [read_trace(p) for p in files]
