"""Minimal dense-tensor kernel: reverse-mode autodiff, transformer blocks,
AdamW with cosine annealing, and a flat checkpoint format. 64-bit floats
throughout; desk scale trades speed for gradient-check fidelity."""

from .tensor import GraphMissing, Tensor, concat
from .layers import (
    Embedding,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    MultiHeadAttention,
    ShapeMismatch,
    TransformerBlock,
    gelu,
    softmax,
)
from .optim import AdamW, NoGrads, StepOutOfRange, TrainConfig, cosine_lr
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AdamW",
    "Embedding",
    "GraphMissing",
    "LayerNorm",
    "Linear",
    "Module",
    "ModuleList",
    "MultiHeadAttention",
    "NoGrads",
    "ShapeMismatch",
    "StepOutOfRange",
    "Tensor",
    "TrainConfig",
    "TransformerBlock",
    "concat",
    "cosine_lr",
    "gelu",
    "load_checkpoint",
    "save_checkpoint",
    "softmax",
]
