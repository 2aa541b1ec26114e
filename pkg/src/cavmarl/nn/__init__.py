"""Dense float64 tensors with reverse-mode autodiff, plus the layers the agents need."""

from .checkpoint import CheckpointError, load_arrays, save_arrays
from .layers import (
    AttentionParams, AttentionResult, MlpParams, gumbel_softmax_sample, init_attention, init_mlp,
    mlp_apply, multi_head_attention, one_hot, sample_gumbel,
)
from .optim import Adam, AdamState, clip_grad_norm, optimizer_step
from .tensor import Tensor, backward, concat, no_grad, relu, softmax, straight_through

__all__ = [
    "Adam", "AdamState", "AttentionParams", "AttentionResult", "CheckpointError", "MlpParams", "Tensor",
    "backward", "clip_grad_norm", "concat", "gumbel_softmax_sample", "init_attention", "init_mlp", "load_arrays",
    "mlp_apply", "multi_head_attention", "no_grad", "one_hot", "optimizer_step", "relu",
    "sample_gumbel", "save_arrays", "softmax", "straight_through",
]
