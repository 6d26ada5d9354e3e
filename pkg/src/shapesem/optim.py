"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment estimates and the step counter for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_shape(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape, dtype=np.float32),
                   v=np.zeros(shape, dtype=np.float32))


def adam_update(param: Tensor, grad: np.ndarray, state: AdamState,
                lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    """One in-place Adam step on ``param.data``; increments ``state.t``."""
    grad = np.asarray(grad, dtype=np.float32)
    if grad.shape != param.data.shape:
        raise DimensionError("grad shape %s != param shape %s"
                             % (grad.shape, param.data.shape))
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient; update refused")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)


class Adam:
    """Tracks AdamState per parameter; ``lr`` may be changed between steps."""

    def __init__(self, params, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = [AdamState.for_shape(p.shape) for p in self.params]

    def step(self):
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            adam_update(p, p.grad, s, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
