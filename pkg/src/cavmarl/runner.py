"""Episode rollouts, the training loop and checkpoint handling."""

from __future__ import annotations

import csv
import json
import math
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import RunConfig, episode_seeds, split_seed
from .env import SCENARIO_LANES, MetaAction, WorldState, get_network, observe, spawn_episode, step
from .game_prior import PriorConfig, hierarchical_priors
from .inspector import InspectorConfig, correct_actions
from .maddpg import (
    AgentNets, ReplayBuffer, Transition, actor_forward, actor_kind_for, actor_update, critic_update,
    init_agent, soft_update_agent,
)
from .metrics import EpisodeTrace
from .nn import load_arrays, save_arrays
from .nn.checkpoint import CheckpointError

LOG_COLUMNS = ("episode", "seed", "reward_0", "reward_1", "reward_2", "reward_3", "mean_reward",
               "collisions", "arrivals", "steps", "outcome")


@dataclass
class EpisodeResult:
    seed: int
    rewards: dict[int, float]
    outcome: str  # success | collision | timeout
    collisions: int  # CAVs that collided
    arrivals: int
    steps: int
    world: WorldState
    transitions: list[Transition] = field(default_factory=list)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(list(self.rewards.values())))


def episode_outcome(world: WorldState) -> str:
    cavs = [world.vehicle(c) for c in world.cav_ids]
    if any(c.status == "collided" for c in cavs):
        return "collision"
    if all(c.status == "arrived" for c in cavs):
        return "success"
    return "timeout"


def _stack_obs(obs: dict, cav_ids: list[int]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([obs[c].rows for c in cav_ids]), np.stack([obs[c].mask for c in cav_ids]))


def decide(world: WorldState, obs: dict, agents: list[AgentNets], variant: str, *, explore: bool,
           rng: np.random.Generator | None, epsilon: float = 0.0, temperature: float = 1.0,
           use_inspector: bool | None = None, prior_cfg: PriorConfig = PriorConfig(),
           insp_cfg: InspectorConfig = InspectorConfig()) -> tuple[dict[int, int], dict]:
    """Joint action for the active CAVs plus a JSON-ready record of how it was reached."""
    if use_inspector is None:
        use_inspector = variant == "ma_ga_ddpg"
    proposals, attention, distances = {}, {}, {}
    for k, cid in enumerate(world.cav_ids):
        if world.done_flags[cid]:
            continue
        res = actor_forward(agents[k].actor, obs[cid], explore, rng, epsilon, temperature)
        proposals[cid] = res.action
        if res.weights is not None:
            ob = obs[cid]
            attention[cid] = {vid: float(res.weights[r]) for r, vid in enumerate(ob.ids)}
            ego = world.vehicle(cid).state
            distances[cid] = {vid: math.hypot(world.vehicle(vid).state.x - ego.x,
                                              world.vehicle(vid).state.y - ego.y) for vid in ob.ids}
    info = {"proposed": {str(k): v for k, v in proposals.items()}}
    if attention:
        info["attention"] = {str(c): {str(v): w for v, w in a.items()} for c, a in attention.items()}
    executed = proposals
    if use_inspector and proposals:
        sets, rank = hierarchical_priors(attention, distances, prior_cfg,
                                         [v.id for v in world.vehicles if v.present])
        info["interaction"] = {str(c): [[v, w] for v, w in s] for c, s in sets.items()}
        info["rank"] = {str(v): r for v, r in rank.rank.items()}
        records: dict = {}
        executed = correct_actions(world, proposals, rank, insp_cfg, records)
        info["inspector"] = records
    return executed, info


def run_episode(agents: list[AgentNets], cfg: RunConfig, seed: int, *, explore: bool = False,
                rng: np.random.Generator | None = None, epsilon: float = 0.0, temperature: float = 1.0,
                use_inspector: bool | None = None, keep_transitions: bool = False,
                on_step: Callable[[Transition], None] | None = None) -> EpisodeResult:
    scenario = cfg.scenario_config()
    world = spawn_episode(scenario, seed)
    cav_ids = world.cav_ids
    obs = {c: observe(world, c) for c in cav_ids}
    totals = {c: 0.0 for c in cav_ids}
    collided, arrived = set(), set()
    transitions = []
    prior_cfg, insp_cfg = cfg.prior_config(), cfg.inspector_config()
    while not world.episode_done:
        executed, info = decide(world, obs, agents, cfg.variant, explore=explore, rng=rng, epsilon=epsilon,
                                temperature=temperature, use_inspector=use_inspector,
                                prior_cfg=prior_cfg, insp_cfg=insp_cfg)
        x, m = _stack_obs(obs, cav_ids)
        _, obs, rewards, dones, events = step(world, executed, info)
        collided.update(events["collided"])
        arrived.update(events["arrived"])
        for c in cav_ids:
            totals[c] += rewards[c]
        if keep_transitions or on_step is not None:
            x2, m2 = _stack_obs(obs, cav_ids)
            t = Transition(x, m, np.array([executed.get(c, int(MetaAction.IDLE)) for c in cav_ids]),
                           np.array([rewards[c] for c in cav_ids]), x2, m2,
                           np.array([dones[c] for c in cav_ids]))
            if keep_transitions:
                transitions.append(t)
            if on_step is not None:
                on_step(t)
    return EpisodeResult(seed, totals, episode_outcome(world), len(collided), len(arrived),
                         world.time_step, world, transitions)


# --- checkpoints -----------------------------------------------------------------------

def save_checkpoint(path, agents: list[AgentNets], cfg: RunConfig, episode: int, extra: dict | None = None):
    arrays, steps = {}, {}
    for k, agent in enumerate(agents):
        arrays.update(agent.named_arrays(f"agent{k}"))
        steps[f"agent{k}.actor_opt"] = agent.actor_opt.state.t
        steps[f"agent{k}.critic_opt"] = agent.critic_opt.state.t
    meta = {"kind": "cavmarl-agents", "code_version": __version__, "variant": cfg.variant,
            "n_agents": len(agents), "episode": episode, "run_config": cfg.to_dict(), "adam_steps": steps}
    meta.update(extra or {})
    return save_arrays(path, arrays, meta)


def build_agents(cfg: RunConfig, n_agents: int = 4, rng: np.random.Generator | None = None) -> list[AgentNets]:
    if rng is None:
        rng = np.random.default_rng(split_seed(cfg.seed)["learner"])
    kind = actor_kind_for(cfg.variant)
    return [init_agent(rng, kind, n_agents, cfg.n_cap, cfg.lr) for _ in range(n_agents)]


def load_checkpoint(path, cfg: RunConfig | None = None) -> tuple[list[AgentNets], RunConfig, dict]:
    """Agents and the run config stored with them; ``cfg`` overrides the stored config if given."""
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "cavmarl-agents":
        raise CheckpointError(f"{path}: not an agent checkpoint")
    stored = RunConfig(**meta["run_config"])
    cfg = cfg or stored
    if actor_kind_for(cfg.variant) != actor_kind_for(stored.variant) or cfg.n_cap != stored.n_cap:
        raise CheckpointError(f"{path}: checkpoint holds {stored.variant} networks, config asks for {cfg.variant}")
    agents = build_agents(stored, meta["n_agents"], np.random.default_rng(0))
    for k, agent in enumerate(agents):
        agent.load_arrays(f"agent{k}", arrays, meta["adam_steps"])
    return agents, cfg, meta


# --- training ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class TrainResult:
    agents: list[AgentNets]
    log_rows: list[dict]
    checkpoints: list[Path]
    updates: int


def train(cfg: RunConfig, out_dir: str | Path | None = None, resume: str | Path | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Centralized training of all CAV agents; writes log, manifest and checkpoints under ``out_dir``."""
    tc = cfg.train_config()
    streams = split_seed(cfg.seed)
    explore_rng = np.random.default_rng(streams["exploration"])
    learn_rng = np.random.default_rng(streams["learner"])
    agents = build_agents(cfg, rng=learn_rng)
    start, total_steps, updates = 0, 0, 0
    if resume is not None:
        agents, _, meta = load_checkpoint(resume, cfg)
        start = meta["episode"]
        total_steps, updates = meta["total_steps"], meta["updates"]
        explore_rng.bit_generator.state = meta["rng"]["exploration"]
        learn_rng.bit_generator.state = meta["rng"]["learner"]
    seeds = episode_seeds(cfg.seed, tc.episodes)
    buf = ReplayBuffer(tc.buffer_size)

    out = Path(out_dir) if out_dir is not None else None
    checkpoints, rows = [], []
    log_file = timing_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.json", cfg, command="train")
        mode = "a" if resume is not None else "w"
        log_file = open(out / "train_log.csv", mode, newline="")
        timing_file = open(out / "train_timing.csv", mode, newline="")
        writer = csv.writer(log_file)
        timer = csv.writer(timing_file)
        if resume is None:
            writer.writerow(LOG_COLUMNS)
            timer.writerow(("episode", "wall_time_s"))

    def ckpt(episode: int):
        if out is None:
            return
        extra = {"total_steps": total_steps, "updates": updates,
                 "rng": {"exploration": explore_rng.bit_generator.state,
                         "learner": learn_rng.bit_generator.state}}
        checkpoints.append(save_checkpoint(out / f"checkpoint_{episode:06d}.ckpt", agents, cfg, episode, extra))

    if start == 0:
        ckpt(0)
    try:
        for ep in range(start, tc.episodes):
            t0 = time.perf_counter()
            eps, temp = tc.exploration.at(ep, tc.episodes)

            def on_step(t: Transition):
                nonlocal total_steps, updates
                buf.push(t)
                total_steps += 1
                if total_steps % tc.steps_per_update == 0 and len(buf) >= tc.batch_size:
                    targets = [a.target_actor for a in agents]
                    for i, agent in enumerate(agents):
                        batch = buf.sample(tc.batch_size, learn_rng)
                        critic_update(agent, i, batch, targets, tc.gamma, tc.grad_clip)
                        actor_update(agent, i, batch, learn_rng, temp, tc.logit_reg, tc.grad_clip)
                    for agent in agents:
                        soft_update_agent(agent, tc.tau)
                    updates += 1

            res = run_episode(agents, cfg, seeds[ep], explore=True, rng=explore_rng, epsilon=eps,
                              temperature=temp, on_step=on_step)
            r = [res.rewards[c] for c in sorted(res.rewards)]
            row = {"episode": ep, "seed": res.seed, **{f"reward_{k}": r[k] for k in range(4)},
                   "mean_reward": res.mean_reward, "collisions": res.collisions,
                   "arrivals": res.arrivals, "steps": res.steps, "outcome": res.outcome}
            rows.append(row)
            if log_file is not None:
                writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row.values()])
                timer.writerow((ep, f"{time.perf_counter() - t0:.4f}"))
            if progress is not None:
                progress(row)
            if tc.checkpoint_every and (ep + 1) % tc.checkpoint_every == 0 and ep + 1 < tc.episodes:
                ckpt(ep + 1)
        if tc.episodes > start:
            ckpt(tc.episodes)
    finally:
        for f in (log_file, timing_file):
            if f is not None:
                f.close()
    return TrainResult(agents, rows, checkpoints, updates)


def write_manifest(path: Path, cfg: RunConfig, **extra):
    manifest = {"code_version": __version__, "config": cfg.to_dict(),
                "seed_streams": {k: list(map(int, s.entropy if isinstance(s.entropy, (list, tuple)) else [s.entropy]))
                                 + list(s.spawn_key) for k, s in split_seed(cfg.seed).items()}}
    manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


# --- evaluation and replay -------------------------------------------------------------

def trace_from_result(res: EpisodeResult, cfg: RunConfig, episode: int = 0,
                      use_inspector: bool | None = None) -> EpisodeTrace:
    world = res.world
    if use_inspector is None:
        use_inspector = cfg.variant == "ma_ga_ddpg"
    header = {
        "episode": episode, "seed": res.seed, "variant": cfg.variant, "scenario": cfg.scenario,
        "traffic": cfg.traffic, "inspector": bool(use_inspector), "code_version": __version__,
        "run_config": cfg.to_dict(), "dt": world.cfg.dt, "substeps": world.cfg.substeps,
        "cav_ids": world.cav_ids, "kinds": {str(v.id): v.kind for v in world.vehicles},
        "styles": {str(v.id): v.style for v in world.vehicles if v.kind == "HV"},
        "outcome": res.outcome, "decision_steps": res.steps,
        "collided": [c for c in world.cav_ids if world.vehicle(c).status == "collided"],
        "arrived": [c for c in world.cav_ids if world.vehicle(c).status == "arrived"],
        "rewards": {str(k): v for k, v in res.rewards.items()}, "mean_reward": res.mean_reward,
        "warnings": list(world.warnings),
    }
    return EpisodeTrace(header, world.log)


_WORKER_AGENTS: list[AgentNets] | None = None


def _init_worker(agents):
    global _WORKER_AGENTS
    _WORKER_AGENTS = agents


def _eval_one(args):
    cfg, seed, k, use_inspector = args
    res = run_episode(_WORKER_AGENTS, cfg, seed, use_inspector=use_inspector)
    return trace_from_result(res, cfg, k, use_inspector)


def evaluation_seeds(seed: int, episodes: int) -> list[int]:
    return episode_seeds(seed, episodes, "evaluation")


def evaluate(agents: list[AgentNets], cfg: RunConfig, episodes: int = 100, seed: int = 0,
             use_inspector: bool | None = None, workers: int = 1) -> list[EpisodeTrace]:
    """Greedy evaluation on seeded episodes; results do not depend on ``workers``."""
    jobs = [(cfg, s, k, use_inspector) for k, s in enumerate(evaluation_seeds(seed, episodes))]
    if workers <= 1:
        _init_worker(agents)
        return [_eval_one(j) for j in jobs]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    with ctx.Pool(workers, initializer=_init_worker, initargs=(agents,)) as pool:
        return pool.map(_eval_one, jobs)


@dataclass
class ReplayReport:
    identical: bool
    steps_checked: int
    first_mismatch: dict | None = None
    narration: list[str] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)


_REPLAY_FIELDS = ("vehicles", "collisions", "rewards", "actions")


def replay_trace(trace: EpisodeTrace) -> ReplayReport:
    """Re-simulate from the seed and the executed actions; compare every sim-step record exactly."""
    cfg = RunConfig(**trace.header["run_config"])
    world = spawn_episode(cfg.scenario_config(), trace.header["seed"])
    sub = world.cfg.substeps
    recorded = trace.records
    for rec in recorded:
        if "actions" in rec:
            step(world, {int(k): v for k, v in rec["actions"].items()})
    narration, events = [], []
    n = max(len(recorded), len(world.log))
    for k in range(n):
        a = recorded[k] if k < len(recorded) else None
        b = world.log[k] if k < len(world.log) else None
        if a is None or b is None:
            return ReplayReport(False, k, {"sim_step": k, "reason": "length differs"}, narration, events)
        for f in _REPLAY_FIELDS:
            if a.get(f) != b.get(f):
                return ReplayReport(False, k, {"sim_step": a["sim_step"], "field": f,
                                               "recorded": a.get(f), "replayed": b.get(f)}, narration, events)
        if "actions" in a:
            events.append({"decision_step": a["sim_step"] // sub, "time": a["time"], "actions": a["actions"],
                           "collisions": a.get("collisions", []), "match": True})
            narration.append(f"t={a['time']:.1f}s step {a['sim_step'] // sub}: actions {a['actions']}"
                             + (f", collisions {a['collisions']}" if "collisions" in a else ""))
    return ReplayReport(True, n, None, narration, events)


def zones_for(cfg: RunConfig):
    """Conflict zones of the configured scenario, keyed by ordered route pairs."""
    return get_network(SCENARIO_LANES[cfg.scenario]).conflict_zones
