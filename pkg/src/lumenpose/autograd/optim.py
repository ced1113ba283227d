"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    def __init__(self, params: list, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params: list[Tensor] = list(params)
        self.state = AdamState(lr, betas[0], betas[1], eps, 0,
                               [np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])

    def step(self) -> None:
        """Apply one update from the populated grads, then clear them."""
        s = self.state
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for p, m, v in zip(self.params, s.m, s.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data -= (s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)).astype(p.data.dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: list, state: AdamState) -> None:
    """Functional form of :meth:`Adam.step` over an explicit state."""
    opt = Adam.__new__(Adam)
    opt.params, opt.state = list(params), state
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    opt.step()
