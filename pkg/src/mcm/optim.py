from __future__ import annotations

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


class Optimizer:
    def __init__(self, params, lr: float):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params: list[Tensor] = list(params)
        self.lr = float(lr)
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self) -> list[np.ndarray]:
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                label = p.name or f"#{i}"
                raise MissingGradientError(f"parameter {label} {p.shape} has no gradient")
            grads.append(p.grad)
        return grads

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"t": np.asarray(self.t, dtype=np.int64)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"])


class SGD(Optimizer):
    def step(self) -> None:
        grads = self._grads()
        self.t += 1
        for p, g in zip(self.params, grads):
            p.data -= (self.lr * g).astype(p.data.dtype)
        self.zero_grad()


class Adam(Optimizer):
    """Adam with bias correction. Moment buffers live per parameter."""

    def __init__(self, params, lr: float = 0.002, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)
        self.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = super().state_dict()
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m
            state[f"v.{i}"] = v
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        super().load_state_dict(state)
        for i in range(len(self.params)):
            self.m[i][...] = state[f"m.{i}"]
            self.v[i][...] = state[f"v.{i}"]


def adam_step(params, lr: float, beta1: float, beta2: float, eps: float, t: int, state: dict | None = None) -> dict:
    """Functional single Adam update; `state` carries the moment buffers between calls."""
    if t < 1:
        raise ValueError("step counter t must be >= 1")
    params = list(params)
    state = state if state is not None else {}
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name or i} has no gradient")
        m = state.setdefault(("m", id(p)), np.zeros_like(p.data))
        v = state.setdefault(("v", id(p)), np.zeros_like(p.data))
        g = p.grad
        m[...] = beta1 * m + (1 - beta1) * g
        v[...] = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)
        p.grad = None
    return state


def make_optimizer(name: str, params, lr: float) -> Optimizer:
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}; choose adam or sgd")
