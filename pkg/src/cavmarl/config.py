"""Flat run configuration, YAML loading and deterministic seed splitting.

Every key below can appear in a YAML file; command-line flags override file
values and unspecified keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .dynamics import ControlGains
from .env import SCENARIO_LANES, RewardConfig, ScenarioConfig
from .game_prior import PriorConfig
from .inspector import InspectorConfig
from .maddpg import VARIANTS, ExplorationSchedule, TrainConfig

TRAFFIC_MODES = ("cav_only", "homogeneous", "heterogeneous")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    run_id: str = "run"
    out: str = "runs"
    variant: str = "ma_ga_ddpg"
    scenario: str = "single_lane"
    traffic: str = "cav_only"
    hv_count_min: int = 2
    hv_count_max: int = 6
    hv_style: str = "Normal"
    seed: int = 0
    episodes: int = 2000
    eval_episodes: int = 100
    steps_per_update: int = 100
    batch_size: int = 128
    gamma: float = 0.95
    tau: float = 0.01
    lr: float = 0.01
    buffer_size: int = 10000
    checkpoint_every: int = 100
    logit_reg: float = 1e-3
    grad_clip: float = 0.5
    eps_start: float = 0.3
    eps_end: float = 0.05
    temp_start: float = 1.0
    temp_end: float = 0.5
    dis0: float = 40.0
    delta0: float = 0.05
    q_max: int = 5
    inspector_horizon: int = 5
    r_c: float = 4.0
    w_c: float = 1.0
    w_e: float = 1.0
    w_a: float = 1.0
    dt: float = 0.1
    substeps: int = 10
    episode_horizon: int = 100
    n_cap: int = 8
    perception_range: float = 50.0
    kp_lat: float = 3.0
    kp_psi: float = 30.0
    kp_v: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.scenario not in SCENARIO_LANES:
            raise ConfigError(f"scenario must be one of {tuple(SCENARIO_LANES)}, got {self.scenario!r}")
        if self.traffic not in TRAFFIC_MODES:
            raise ConfigError(f"traffic must be one of {TRAFFIC_MODES}, got {self.traffic!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        try:
            self.scenario_config()
            self.train_config()
            self.prior_config()
            self.inspector_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def scenario_config(self) -> ScenarioConfig:
        hv_mode = "none" if self.traffic == "cav_only" else self.traffic
        hv_count = (0, 0) if hv_mode == "none" else (self.hv_count_min, self.hv_count_max)
        return ScenarioConfig(
            lanes_per_approach=SCENARIO_LANES[self.scenario], hv_mode=hv_mode, hv_count=hv_count,
            hv_style=self.hv_style, dt=self.dt, substeps=self.substeps, horizon=self.episode_horizon,
            n_cap=self.n_cap, perception_range=self.perception_range,
            reward=RewardConfig(w_c=self.w_c, w_e=self.w_e, w_a=self.w_a),
            gains=ControlGains(kp_lat=self.kp_lat, kp_psi=self.kp_psi, kp_v=self.kp_v),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            episodes=self.episodes, steps_per_update=self.steps_per_update, batch_size=self.batch_size,
            gamma=self.gamma, tau=self.tau, lr=self.lr, buffer_size=self.buffer_size,
            checkpoint_every=self.checkpoint_every, seed=self.seed,
            logit_reg=self.logit_reg, grad_clip=self.grad_clip,
            exploration=ExplorationSchedule(self.eps_start, self.eps_end, self.temp_start, self.temp_end),
        )

    def prior_config(self) -> PriorConfig:
        return PriorConfig(self.dis0, self.delta0, self.q_max)

    def inspector_config(self) -> InspectorConfig:
        return InspectorConfig(self.inspector_horizon, self.r_c)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **kw) -> "RunConfig":
        return merge(self.to_dict(), {k: v for k, v in kw.items() if v is not None})


def _coerce(name: str, value, kind):
    try:
        if kind is bool:
            return bool(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {name!r}: cannot read {value!r} as {kind.__name__}") from exc


def merge(base: dict, overrides: dict) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = dict(base)
    for k, v in overrides.items():
        kind = type(getattr(RunConfig, k)) if hasattr(RunConfig, k) else str
        values[k] = _coerce(k, v, kind)
    return RunConfig(**values)


def read_config_file(path: str | Path) -> dict:
    """Raw flat key mapping from a YAML file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping of flat keys")
    return data


def load_config(path: str | Path | None, base: RunConfig | None = None, **overrides) -> RunConfig:
    """``base`` (defaults if omitted), then the YAML file, then non-None overrides."""
    data = read_config_file(path) if path is not None else {}
    cfg = merge((base or RunConfig()).to_dict(), data)
    return cfg.with_overrides(**overrides)


def dump_config(cfg: RunConfig, path: str | Path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


SUBSYSTEMS = ("env", "exploration", "learner", "evaluation")


def split_seed(seed: int) -> dict[str, np.random.SeedSequence]:
    """Independent seed streams per subsystem, derived from one root seed."""
    return dict(zip(SUBSYSTEMS, np.random.SeedSequence(seed).spawn(len(SUBSYSTEMS))))


def episode_seeds(root: int, n: int, stream: str = "env") -> list[int]:
    """Per-episode environment seeds drawn from the root seed's ``stream``."""
    rng = np.random.default_rng(split_seed(root)[stream])
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=n)]
