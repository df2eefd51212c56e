"""AdamW with decoupled weight decay, plus the cosine annealing schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


class NoGrads(RuntimeError):
    """step() called before any backward pass populated a gradient."""


class StepOutOfRange(ValueError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 3e-4
    batch: int = 32
    epochs: int = 30
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    total_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 · (1 + cos(pi·step/total)) / 2, annealing to 0."""
    if not (0 <= step <= total_steps):
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class AdamW:
    """Decoupled-decay Adam over a named parameter dict.

    Parameters with no gradient this step are only decayed, so modes that
    bypass a submodule leave it effectively frozen apart from decay; decay
    is skipped too when the gradient is absent, leaving it fully frozen.
    """

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr_t: float) -> None:
        if all(p.grad is None for p in self.params.values()):
            raise NoGrads("no parameter has a gradient; run backward() first")
        self.step_count += 1
        b1, b2 = self.cfg.betas
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            # Decay is decoupled: applied to the parameter directly, never
            # folded into the gradient.
            if self.cfg.weight_decay:
                p.data *= 1.0 - lr_t * self.cfg.weight_decay
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.data -= lr_t * m_hat / (np.sqrt(v_hat) + self.cfg.eps)
