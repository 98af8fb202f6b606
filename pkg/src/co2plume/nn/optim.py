"""Adam optimizer with bias correction; moment state lives on the Parameter."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


class Adam:
    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Parameter] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            p.t += 1
            p.m += (1.0 - self.beta1) * (g - p.m)
            p.v += (1.0 - self.beta2) * (g * g - p.v)
            mhat = p.m / (1.0 - self.beta1 ** p.t)
            vhat = p.v / (1.0 - self.beta2 ** p.t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                p.data.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adam_step(params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One functional Adam update over parameters whose .grad is set."""
    Adam(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps).step()
