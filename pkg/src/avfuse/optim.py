"""Optimizers and the warmup learning-rate schedule."""

from __future__ import annotations

import numpy as np

__all__ = ["Sgd", "Adam", "NoamSchedule"]


class Sgd:
    """Plain gradient descent; the easy-to-reason-about mode for tests."""

    def __init__(self, named_params, lr: float = 0.1):
        self.named_params = list(named_params)
        self.lr = lr

    def step(self):
        for name, p in self.named_params:
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            p.data = p.data - self.lr * p.grad

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()


class Adam:
    def __init__(self, named_params, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.98), eps: float = 1e-9):
        self.named_params = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self):
        self.t += 1
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            mhat = self.m[name] / (1.0 - self.b1**self.t)
            vhat = self.v[name] / (1.0 - self.b2**self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()


class NoamSchedule:
    """lr = factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).

    ``factor`` is the overall scale: large for training a model from scratch,
    two orders smaller when fine-tuning one that is already converged.
    """

    def __init__(self, d_model: int, warmup: int = 4000, factor: float = 5.0):
        if warmup < 1:
            raise ValueError("warmup must be >= 1")
        self.d_model = d_model
        self.warmup = warmup
        self.factor = factor

    def lr(self, step: int) -> float:
        step = max(1, int(step))
        return (
            self.factor
            * self.d_model**-0.5
            * min(step**-0.5, step * self.warmup**-1.5)
        )
