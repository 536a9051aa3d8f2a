"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PoisonedGradientError, ShapeError
from .tensor import Tensor


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr to 0 over total_steps; step counts from 1."""
    t = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


@dataclass
class OptimState:
    """Per-parameter first/second moment buffers plus the shared step counter."""

    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    total_steps: int = 1000
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, params: list[Tensor]) -> None:
        if not self.m:
            self.m = [np.zeros(p.shape, dtype=np.float32) for p in params]
            self.v = [np.zeros(p.shape, dtype=np.float32) for p in params]


def adamw_step(params: list[Tensor], grads: list[np.ndarray], state: OptimState) -> float:
    """One decoupled-weight-decay Adam update in place; returns the lr used.

    The learning rate follows cosine decay from state.lr to 0 over
    state.total_steps. Raises PoisonedGradientError (before touching any
    parameter) if any gradient is non-finite.
    """
    state.ensure(params)
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"adamw_step: grad {g.shape} vs param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise PoisonedGradientError("adamw_step: non-finite gradient, step aborted")
    state.step += 1
    t = state.step
    lr = cosine_lr(state.lr, t, state.total_steps)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.m[i], state.v[i]
        if b1 == 0.0:
            m[...] = g
        else:
            m *= b1
            m += (1.0 - b1) * g
        if b2 == 0.0:
            v[...] = g * g
        else:
            v *= b2
            v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return lr


class AdamW:
    """Object wrapper: pulls gradients from param.grad and clears them after the step."""

    def __init__(self, params: list[Tensor], lr=4e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.05, total_steps=1000):
        self.params = list(params)
        self.state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                weight_decay=weight_decay, total_steps=total_steps)

    def step(self) -> float:
        grads = []
        for p in self.params:
            grads.append(p.grad if p.grad is not None else np.zeros(p.shape, dtype=np.float32))
        return adamw_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
