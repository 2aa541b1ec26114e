"""Network building blocks on top of the autodiff engine."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, concat, matmul, relu, softmax, straight_through, tanh

_ACTIVATIONS = {"relu": relu, "tanh": tanh}


def _param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out))


@dataclass
class MlpParams:
    weights: list[Tensor]
    biases: list[Tensor]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("MlpParams needs one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k} expects {w.shape[0]} inputs, "
                                 f"previous layer gives {self.weights[k - 1].shape[1]}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_mlp(rng: np.random.Generator, sizes: list[int], name: str = "mlp",
             activation: str = "relu") -> MlpParams:
    weights = [_param(glorot(rng, a, b), f"{name}.w{k}") for k, (a, b) in enumerate(zip(sizes, sizes[1:]))]
    biases = [_param(np.zeros(b), f"{name}.b{k}") for k, b in enumerate(sizes[1:])]
    return MlpParams(weights, biases, activation)


def mlp_apply(p: MlpParams, x: Tensor, final_activation: bool = False) -> Tensor:
    """Affine layers with the activation between them (and optionally after the last)."""
    if x.shape[-1] != p.weights[0].shape[0]:
        raise ValueError(f"mlp input has last dimension {x.shape[-1]}, first layer expects "
                         f"{p.weights[0].shape[0]}")
    act = _ACTIVATIONS[p.activation]
    h = x
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = matmul(h, w) + b
        if k < last or final_activation:
            h = act(h)
    return h


@dataclass
class AttentionParams:
    wq: Tensor  # (d_in, n_heads * d_k)
    wk: Tensor  # (d_in, n_heads * d_k)
    wv: Tensor  # (d_in, n_heads * d_v)
    wo: Tensor  # (d_v, d_out), applied to the sum of head outputs
    bo: Tensor  # (d_out,)
    n_heads: int
    d_k: int
    d_v: int

    def __post_init__(self):
        d_in = self.wq.shape[0]
        expect = {"wq": (d_in, self.n_heads * self.d_k), "wk": (d_in, self.n_heads * self.d_k),
                  "wv": (d_in, self.n_heads * self.d_v)}
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.wo.shape[0] != self.d_v or self.bo.shape != (self.wo.shape[1],):
            raise ValueError("output projection does not match d_v")
        for name in ("wq", "wk", "wv", "wo", "bo"):
            if not np.all(np.isfinite(getattr(self, name).data)):
                raise ValueError(f"{name} contains non-finite values")

    def parameters(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv, self.wo, self.bo]


def init_attention(rng: np.random.Generator, d_in: int, n_heads: int = 2, d_k: int = 64,
                   d_v: int | None = None, name: str = "att") -> AttentionParams:
    d_v = d_k if d_v is None else d_v
    return AttentionParams(
        wq=_param(glorot(rng, d_in, n_heads * d_k), f"{name}.wq"),
        wk=_param(glorot(rng, d_in, n_heads * d_k), f"{name}.wk"),
        wv=_param(glorot(rng, d_in, n_heads * d_v), f"{name}.wv"),
        wo=_param(np.eye(d_v), f"{name}.wo"),
        bo=_param(np.zeros(d_v), f"{name}.bo"),
        n_heads=n_heads, d_k=d_k, d_v=d_v,
    )


@dataclass
class AttentionResult:
    context: Tensor  # (B, d_out) or (d_out,)
    head_weights: np.ndarray  # (B, M, N) or (M, N)
    weights: np.ndarray  # (B, N) or (N,), mean over heads


def multi_head_attention(query_feat: Tensor, kv_feats: Tensor, mask, p: AttentionParams) -> AttentionResult:
    """Single-query scaled dot-product attention with ``n_heads`` heads.

    Accepts ``query_feat`` of shape (d,) with ``kv_feats`` (N, d), or batched
    (B, d) with (B, N, d). Head outputs are summed, then projected.
    """
    batched = kv_feats.ndim == 3
    if not batched:
        query_feat = query_feat.reshape(1, -1)
        kv_feats = kv_feats.reshape(1, *kv_feats.shape)
    mask = np.asarray(mask, dtype=bool).reshape(kv_feats.shape[0], kv_feats.shape[1])
    if kv_feats.shape[1] < 1:
        raise ValueError("attention needs at least one key row")
    if not mask.any(axis=1).all():
        raise ValueError("attention with every row masked: no attendable entity")
    b, n, _ = kv_feats.shape
    m, dk, dv = p.n_heads, p.d_k, p.d_v

    q = matmul(query_feat, p.wq).reshape(b, m, 1, dk)
    k = matmul(kv_feats, p.wk).reshape(b, n, m, dk).transpose(0, 2, 3, 1)  # (B, M, dk, N)
    v = matmul(kv_feats, p.wv).reshape(b, n, m, dv).transpose(0, 2, 1, 3)  # (B, M, N, dv)
    logits = matmul(q, k) * (1.0 / math.sqrt(dk))  # (B, M, 1, N)
    w = softmax(logits, axis=-1, mask=mask[:, None, None, :])
    heads = matmul(w, v)  # (B, M, 1, dv)
    context = matmul(heads.sum(axis=1).reshape(b, dv), p.wo) + p.bo

    head_w = w.data[:, :, 0, :]
    combined = head_w.mean(axis=1)
    if not batched:
        return AttentionResult(context.reshape(-1), head_w[0], combined[0])
    return AttentionResult(context, head_w, combined)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(float).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(logits: Tensor, temperature: float, rng: np.random.Generator | None = None,
                          hard: bool = False, noise: np.ndarray | None = None) -> Tensor:
    """Relaxed one-hot sample over the last axis.

    With ``hard`` the forward value is the argmax one-hot while gradients flow
    through the soft sample. ``noise`` fixes the Gumbel draw (for tests).
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if noise is None:
        noise = sample_gumbel(rng, logits.shape)
    soft = softmax((logits + noise) * (1.0 / temperature), axis=-1)
    if not hard:
        return soft
    return straight_through(one_hot(soft.data.argmax(axis=-1), logits.shape[-1]), soft)


def one_hot(index, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(index)]


def concat_features(parts: list[Tensor]) -> Tensor:
    return concat(parts, axis=-1)
