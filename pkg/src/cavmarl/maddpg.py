"""Discrete-action MADDPG with attention actors and centralized critics."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .env import N_ACTIONS, N_FEATURES, Observation
from .nn import (
    Adam, AttentionParams, MlpParams, Tensor, backward, clip_grad_norm, concat, gumbel_softmax_sample, init_attention,
    init_mlp, mlp_apply, multi_head_attention, no_grad, one_hot,
)

VARIANTS = ("maddpg", "attention_maddpg", "ma_ga_ddpg")

# Fixed input scaling of the (x, y, vx, vy, cos, sin) rows.
FEATURE_SCALE = np.array([50.0, 50.0, 10.0, 10.0, 1.0, 1.0])


def scale_rows(rows: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return rows / FEATURE_SCALE * mask[..., None]


@dataclass
class ActorNet:
    kind: str  # attention | mlp
    encoder: MlpParams | None = None
    attention: AttentionParams | None = None
    decoder: MlpParams | None = None
    mlp: MlpParams | None = None

    def parameters(self) -> list[Tensor]:
        if self.kind == "mlp":
            return self.mlp.parameters()
        return self.encoder.parameters() + self.attention.parameters() + self.decoder.parameters()

    def forward(self, rows: np.ndarray, mask: np.ndarray) -> tuple[Tensor, np.ndarray | None]:
        """Logits (B, 3) and combined attention weights (B, N) for batched observations."""
        x = Tensor(scale_rows(rows, mask))
        if self.kind == "mlp":
            return mlp_apply(self.mlp, x.reshape(x.shape[0], -1)), None
        enc = mlp_apply(self.encoder, x, final_activation=True)  # (B, N, 64)
        ego = enc[:, 0, :]
        att = multi_head_attention(ego, enc, mask, self.attention)
        logits = mlp_apply(self.decoder, concat([att.context, ego], axis=-1))
        return logits, att.weights


def init_actor(rng: np.random.Generator, kind: str, n_cap: int = 8, hidden: int = 64,
               n_heads: int = 2, d_k: int = 64) -> ActorNet:
    if kind == "mlp":
        return ActorNet("mlp", mlp=init_mlp(rng, [n_cap * N_FEATURES, hidden, hidden, N_ACTIONS], "actor"))
    if kind != "attention":
        raise ValueError(f"unknown actor kind {kind!r}")
    enc = init_mlp(rng, [N_FEATURES, hidden, hidden], "enc")
    att = init_attention(rng, hidden, n_heads, d_k, name="att")
    dec = init_mlp(rng, [att.wo.shape[1] + hidden, hidden, hidden, N_ACTIONS], "dec")
    return ActorNet("attention", enc, att, dec)


@dataclass
class CriticNet:
    mlp: MlpParams

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def forward(self, obs_flat: np.ndarray, actions: Tensor) -> Tensor:
        """Q (B,) from every agent's scaled observation and (relaxed) one-hot action."""
        return mlp_apply(self.mlp, concat([Tensor(obs_flat), actions], axis=-1)).reshape(-1)


def init_critic(rng: np.random.Generator, n_agents: int, n_cap: int = 8, hidden: int = 128) -> CriticNet:
    n_in = n_agents * (n_cap * N_FEATURES + N_ACTIONS)
    return CriticNet(init_mlp(rng, [n_in, hidden, hidden, 1], "critic"))


def clone_params(net):
    """Deep copy with fresh, independent parameter tensors."""
    return copy.deepcopy(net)


@dataclass
class AgentNets:
    actor: ActorNet
    critic: CriticNet
    target_actor: ActorNet
    target_critic: CriticNet
    actor_opt: Adam
    critic_opt: Adam

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("target_actor", self.target_actor), ("target_critic", self.target_critic)):
            for p in net.parameters():
                out[f"{prefix}.{tag}.{p.name}"] = p.data
        for tag, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            for p, m, v in zip(opt.params, opt.state.m, opt.state.v):
                out[f"{prefix}.{tag}.m.{p.name}"] = m
                out[f"{prefix}.{tag}.v.{p.name}"] = v
        return out

    def load_arrays(self, prefix: str, arrays: dict[str, np.ndarray], steps: dict[str, int]):
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("target_actor", self.target_actor), ("target_critic", self.target_critic)):
            for p in net.parameters():
                key = f"{prefix}.{tag}.{p.name}"
                if arrays[key].shape != p.shape:
                    raise ValueError(f"checkpoint entry {key} has shape {arrays[key].shape}, expected {p.shape}")
                p.data = arrays[key].copy()
        for tag, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            opt.state.m = [arrays[f"{prefix}.{tag}.m.{p.name}"].copy() for p in opt.params]
            opt.state.v = [arrays[f"{prefix}.{tag}.v.{p.name}"].copy() for p in opt.params]
            opt.state.t = int(steps.get(f"{prefix}.{tag}", 0))


def init_agent(rng: np.random.Generator, actor_kind: str, n_agents: int, n_cap: int = 8,
               lr: float = 0.01) -> AgentNets:
    actor = init_actor(rng, actor_kind, n_cap)
    critic = init_critic(rng, n_agents, n_cap)
    return AgentNets(actor, critic, clone_params(actor), clone_params(critic),
                     Adam(actor.parameters(), lr), Adam(critic.parameters(), lr))


def actor_kind_for(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return "mlp" if variant == "maddpg" else "attention"


# --- acting ---------------------------------------------------------------------------

@dataclass
class ActResult:
    action: int
    relaxed: np.ndarray  # (3,) relaxed one-hot used for the decision
    weights: np.ndarray | None  # combined attention over observation rows


def actor_forward(actor: ActorNet, obs: Observation, explore: bool = False,
                  rng: np.random.Generator | None = None, epsilon: float = 0.0,
                  temperature: float = 1.0) -> ActResult:
    """Decentralized action choice: reads only this agent's actor and observation."""
    with no_grad():
        logits, weights = actor.forward(obs.rows[None], obs.mask[None])
    w = None if weights is None else weights[0]
    if not explore:
        a = int(np.argmax(logits.data[0]))
        return ActResult(a, one_hot(a, N_ACTIONS), w)
    relaxed = gumbel_softmax_sample(logits, temperature, rng).data[0]
    a = int(np.argmax(relaxed))
    if rng.random() < epsilon:
        a = int(rng.integers(N_ACTIONS))
    return ActResult(a, relaxed, w)


# --- replay buffer --------------------------------------------------------------------

@dataclass
class Transition:
    obs: np.ndarray  # (A, n_cap, 6)
    mask: np.ndarray  # (A, n_cap)
    actions: np.ndarray  # (A,) int
    rewards: np.ndarray  # (A,)
    next_obs: np.ndarray
    next_mask: np.ndarray
    dones: np.ndarray  # (A,) bool

    def __post_init__(self):
        n = len(self.actions)
        for name in ("obs", "mask", "rewards", "next_obs", "next_mask", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"transition field {name} has arity {len(getattr(self, name))}, expected {n}")


_FIELDS = ("obs", "mask", "actions", "rewards", "next_obs", "next_mask", "dones")


class ReplayBuffer:
    """Fixed-capacity FIFO ring of joint transitions, stored field-wise."""

    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.size = 0
        self._next = 0
        self._data: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition):
        if self._data is None:
            self._data = {k: np.zeros((self.capacity,) + np.shape(getattr(t, k)),
                                      dtype=np.asarray(getattr(t, k)).dtype) for k in _FIELDS}
        for k in _FIELDS:
            self._data[k][self._next] = getattr(t, k)
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices_in_order(self) -> np.ndarray:
        """Storage slots from oldest to newest."""
        start = self._next if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def get(self, slot: int) -> Transition:
        return Transition(**{k: self._data[k][slot].copy() for k in _FIELDS})

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray | None:
        if self.size < batch_size:
            return None
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray] | None:
        """Uniform sample with replacement; ``None`` while the buffer holds fewer than ``batch_size``."""
        idx = self.sample_indices(batch_size, rng)
        if idx is None:
            return None
        return self.batch(idx)

    def batch(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {k: self._data[k][idx] for k in _FIELDS}


def buffer_push(buf: ReplayBuffer, t: Transition):
    buf.push(t)


def buffer_sample(buf: ReplayBuffer, batch_size: int, rng: np.random.Generator):
    return buf.sample(batch_size, rng)


# --- updates --------------------------------------------------------------------------

def _flat_obs(obs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """(B, A, N, 6) -> (B, A*N*6) scaled and masked."""
    return scale_rows(obs, mask).reshape(obs.shape[0], -1)


def _one_hot_actions(actions: np.ndarray) -> np.ndarray:
    """(B, A) int -> (B, A*3)."""
    return one_hot(actions, N_ACTIONS).reshape(actions.shape[0], -1)


def target_actions(target_actors: list[ActorNet], next_obs: np.ndarray, next_mask: np.ndarray) -> np.ndarray:
    """Greedy one-hot actions of every target actor on x', shape (B, A*3)."""
    parts = []
    with no_grad():
        for j, actor in enumerate(target_actors):
            logits, _ = actor.forward(next_obs[:, j], next_mask[:, j])
            parts.append(one_hot(logits.data.argmax(axis=-1), N_ACTIONS))
    return np.concatenate(parts, axis=-1)


def critic_update(agent: AgentNets, i: int, batch: dict | None, target_actors: list[ActorNet],
                  gamma: float = 0.95, grad_clip: float = 0.0) -> float | None:
    """One MSE step of agent ``i``'s critic toward r_i + gamma Q'(x', a'); ``None`` without a batch."""
    if batch is None:
        return None
    with no_grad():
        a_next = target_actions(target_actors, batch["next_obs"], batch["next_mask"])
        q_next = agent.target_critic.forward(_flat_obs(batch["next_obs"], batch["next_mask"]),
                                             Tensor(a_next)).data
    alive = 1.0 - batch["dones"][:, i].astype(float)
    y = batch["rewards"][:, i] + gamma * alive * q_next
    q = agent.critic.forward(_flat_obs(batch["obs"], batch["mask"]),
                             Tensor(_one_hot_actions(batch["actions"])))
    diff = q - y
    loss = (diff * diff).mean()
    agent.critic_opt.zero_grad()
    backward(loss, agent.critic.parameters())
    if grad_clip:
        clip_grad_norm(agent.critic.parameters(), grad_clip)
    agent.critic_opt.step()
    return loss.item()


def actor_objective(agent: AgentNets, i: int, batch: dict, rng: np.random.Generator | None,
                    temperature: float = 1.0, hard: bool = True, noise: np.ndarray | None = None,
                    logit_reg: float = 0.0) -> Tensor:
    """-mean Q_i with agent i's action re-sampled from its actor; others keep the stored actions.

    ``logit_reg`` adds an L2 penalty on the logits that keeps the policy from saturating.
    """
    logits, _ = agent.actor.forward(batch["obs"][:, i], batch["mask"][:, i])
    relaxed = gumbel_softmax_sample(logits, temperature, rng, hard=hard, noise=noise)
    acts = one_hot(batch["actions"], N_ACTIONS)  # (B, A, 3)
    parts = [relaxed if j == i else Tensor(acts[:, j]) for j in range(acts.shape[1])]
    q = agent.critic.forward(_flat_obs(batch["obs"], batch["mask"]), concat(parts, axis=-1))
    loss = -q.mean()
    if logit_reg:
        loss = loss + (logits * logits).mean() * logit_reg
    return loss


def actor_update(agent: AgentNets, i: int, batch: dict | None, rng: np.random.Generator,
                 temperature: float = 1.0, logit_reg: float = 0.0, grad_clip: float = 0.0) -> float | None:
    """One ascent step on E[Q_i] through the straight-through relaxation; returns the objective."""
    if batch is None:
        return None
    loss = actor_objective(agent, i, batch, rng, temperature, logit_reg=logit_reg)
    agent.actor_opt.zero_grad()
    backward(loss, agent.actor.parameters())
    if grad_clip:
        clip_grad_norm(agent.actor.parameters(), grad_clip)
    agent.actor_opt.step()
    for p in agent.critic.parameters():
        p.grad = None
    return -loss.item()


def soft_update(target_params: list[Tensor], params: list[Tensor], tau: float):
    """theta' <- tau theta + (1 - tau) theta', in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    for tp, p in zip(target_params, params):
        tp.data = tau * p.data + (1.0 - tau) * tp.data


def soft_update_agent(agent: AgentNets, tau: float):
    soft_update(agent.target_actor.parameters(), agent.actor.parameters(), tau)
    soft_update(agent.target_critic.parameters(), agent.critic.parameters(), tau)


@dataclass
class ExplorationSchedule:
    eps_start: float = 0.3
    eps_end: float = 0.05
    temp_start: float = 1.0
    temp_end: float = 0.5

    def at(self, episode: int, total: int) -> tuple[float, float]:
        """Linear anneal over the run: (epsilon, temperature)."""
        frac = min(episode / max(total - 1, 1), 1.0)
        return (self.eps_start + frac * (self.eps_end - self.eps_start),
                self.temp_start + frac * (self.temp_end - self.temp_start))


@dataclass
class TrainConfig:
    episodes: int = 2000
    steps_per_update: int = 100
    batch_size: int = 128
    gamma: float = 0.95
    tau: float = 0.01
    lr: float = 0.01
    buffer_size: int = 10000
    checkpoint_every: int = 100
    logit_reg: float = 1e-3
    grad_clip: float = 0.5
    exploration: ExplorationSchedule = field(default_factory=ExplorationSchedule)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.episodes < 0 or self.steps_per_update < 1 or self.batch_size < 1:
            raise ValueError("episodes >= 0, steps_per_update >= 1 and batch_size >= 1 required")
