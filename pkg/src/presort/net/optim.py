"""Adam and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_size: int = 100
    decay: float = 0.05
    focal_gamma: float = 2.0


def lr_schedule(epoch: int, base_lr: float, step_size: int = 100, decay: float = 0.05) -> float:
    """``base_lr * decay ** (epoch // step_size)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay ** (epoch // step_size)


@dataclass
class Adam:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place from ``grads`` (same keys)."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r} "
                                         f"at step {self.step_count + 1}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def adam_step(params: dict, optim: Adam, grads: dict):
    """Functional wrapper: one Adam update, returns ``(params, optim)``."""
    optim.step(params, grads)
    return params, optim
