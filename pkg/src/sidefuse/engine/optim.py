"""Named parameters, freezing, and the two optimizers (plain SGD, Adam).

Frozen parameters are excluded from autodiff (requires_grad off) and from
optimizer state entirely: their bytes are bit-identical before and after any
number of steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DTYPE, Tensor


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    frozen: bool = False

    def __post_init__(self):
        self.tensor.requires_grad = not self.frozen

    def freeze(self) -> None:
        self.frozen = True
        self.tensor.requires_grad = False
        self.tensor.grad = None

    def unfreeze(self) -> None:
        self.frozen = False
        self.tensor.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


def parameter(name: str, data: np.ndarray) -> Parameter:
    return Parameter(name, Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True))


def zero_grad(params: list[Parameter]) -> None:
    for p in params:
        p.tensor.grad = None


def _check_grads(params: list[Parameter]) -> None:
    for p in params:
        if not p.frozen and p.tensor.grad is None:
            raise ValueError(f"missing gradient for non-frozen parameter '{p.name}'")


class SGD:
    """Plain gradient descent: p -= lr * grad."""

    def __init__(self, params: list[Parameter], learning_rate: float = 1e-3):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.step_count = 0

    def step(self) -> None:
        _check_grads(self.params)
        lr = DTYPE(self.learning_rate)
        for p in self.params:
            if p.frozen:
                continue
            p.tensor.data -= lr * p.tensor.grad
        self.step_count += 1


class Adam:
    """Adam with bias correction; defaults lr 1e-3, betas 0.9/0.999, eps 1e-8.

    ``weight_decay`` is decoupled (applied directly to the parameter, not the
    gradient). Moment buffers are created lazily and only for non-frozen
    parameters.
    """

    def __init__(self, params: list[Parameter], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self) -> None:
        _check_grads(self.params)
        self.step_count += 1
        t = self.step_count
        lr = DTYPE(self.learning_rate)
        b1, b2 = DTYPE(self.beta1), DTYPE(self.beta2)
        # constants formed in float64 first, then rounded once
        one_m_b1, one_m_b2 = DTYPE(1.0 - self.beta1), DTYPE(1.0 - self.beta2)
        c1 = DTYPE(1.0 - self.beta1 ** t)
        c2 = DTYPE(1.0 - self.beta2 ** t)
        eps = DTYPE(self.eps)
        for p in self.params:
            if p.frozen:
                continue
            g = p.tensor.grad
            if p.name not in self.moments:
                self.moments[p.name] = (np.zeros_like(p.tensor.data),
                                        np.zeros_like(p.tensor.data))
            m, v = self.moments[p.name]
            m[...] = b1 * m + one_m_b1 * g
            v[...] = b2 * v + one_m_b2 * (g * g)
            p.tensor.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
            if self.weight_decay:
                p.tensor.data -= lr * DTYPE(self.weight_decay) * p.tensor.data


def make_optimizer(kind: str, params: list[Parameter], learning_rate: float,
                   weight_decay: float = 0.0):
    if kind == "adam":
        return Adam(params, learning_rate, weight_decay=weight_decay)
    if kind == "sgd":
        if weight_decay:
            raise ValueError("weight decay is only wired into the adaptive optimizer")
        return SGD(params, learning_rate)
    raise ValueError(f"unknown optimizer '{kind}' (expected 'adam' or 'sgd')")
