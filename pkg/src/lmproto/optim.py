"""SGD / Adam over named parameter tensors, plus a step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.1
    weight_decay: float = 1e-5
    lr_decay: float = 0.1
    lr_decay_every: int = 20_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


@dataclass
class OptimizerState:
    config: OptimizerConfig
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        cfg = self.config
        if cfg.lr_decay_every <= 0:
            return cfg.learning_rate
        return cfg.learning_rate * cfg.lr_decay ** (self.step_count // cfg.lr_decay_every)


def optimizer_step(state: OptimizerState, params: dict[str, Tensor]) -> None:
    """Apply one update in place and clear gradients."""
    missing = [name for name, p in params.items() if p.requires_grad and p.grad is None]
    if missing:
        raise RuntimeError(f"missing gradients for: {', '.join(sorted(missing))}")
    cfg = state.config
    lr = state.current_lr()
    t = state.step_count + 1
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = p.grad
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        if cfg.kind == "sgd":
            p.data -= (lr * g).astype(p.dtype, copy=False)
        else:
            m = state.first_moment.setdefault(name, np.zeros_like(p.data))
            v = state.second_moment.setdefault(name, np.zeros_like(p.data))
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1**t)
            v_hat = v / (1 - cfg.beta2**t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype, copy=False)
        p.grad = None
    state.step_count = t
