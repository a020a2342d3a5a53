"""AdamW with decoupled weight decay, and the step learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams


@dataclass
class AdamW:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place.

        ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * weight_decay * p``
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.tensors.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
            m = self.m.get(name)
            v = self.v.get(name)
            m = np.zeros(p.shape) if m is None else m.astype(np.float64)
            v = np.zeros(p.shape) if v is None else v.astype(np.float64)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            w = p.astype(np.float64)
            w = w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps) - self.lr * self.weight_decay * w
            params.tensors[name] = w.astype(p.dtype)
            self.m[name] = m.astype(p.dtype)
            self.v[name] = v.astype(p.dtype)
        params.version += 1

    def hyperparams(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay}


@dataclass
class StepLR:
    base_lr: float = 1e-4
    gamma: float = 0.5
    step_size: int = 10
    epoch: int = 0

    def lr(self, epoch: int | None = None) -> float:
        return scheduler_lr(self.epoch if epoch is None else epoch, self.base_lr, self.gamma,
                            self.step_size)


def scheduler_lr(epoch: int, base_lr: float = 1e-4, gamma: float = 0.5, step_size: int = 10
                 ) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * math.pow(gamma, epoch // step_size)
