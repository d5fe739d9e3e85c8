"""Minimal AdamW with decoupled weight decay on numpy arrays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class AdamW:
    """AdamW for a single parameter array.

    Weight decay is decoupled: theta <- theta - lr * (m_hat / (sqrt(v_hat)
    + eps) + weight_decay * theta). lr_scale lets callers anneal the step
    size without touching the stored base rate.
    """

    learning_rate: float = 0.1
    betas: tuple[float, float] = (0.5, 0.8)
    weight_decay: float = 0.0
    eps: float = 1e-8

    def __post_init__(self):
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr_scale: float = 1.0) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1.0 - b1) * grad
        self.v = b2 * self.v + (1.0 - b2) * grad * grad
        m_hat = self.m / (1.0 - b1**self.t)
        v_hat = self.v / (1.0 - b2**self.t)
        lr = self.learning_rate * lr_scale
        update = m_hat / (np.sqrt(v_hat) + self.eps)
        if self.weight_decay:
            update = update + self.weight_decay * theta
        return theta - lr * update


def cosine_lr_scale(step: int, total_steps: int) -> float:
    """Cosine anneal from 1 at the first step to 0 at the last."""
    if total_steps <= 1:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * (step - 1) / (total_steps - 1)))
