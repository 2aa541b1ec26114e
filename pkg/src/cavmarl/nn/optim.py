"""Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor], **kw) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **kw)


def optimizer_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
                   lr: float = 0.01) -> list[Tensor]:
    """One bias-corrected Adam step, updating ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for k, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient for {p.name or k} has shape {g.shape}, parameter {p.shape}")
        if np.isnan(g).any():
            raise FloatingPointError(f"NaN gradient for parameter {p.name or k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        p.data = p.data - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
    return params


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 0.01
    state: AdamState = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = AdamState.for_params(self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        optimizer_step(self.params, grads, self.state, self.lr)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
