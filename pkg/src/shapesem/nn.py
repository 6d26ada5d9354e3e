"""Thin layer abstractions over the tensor engine.

Weight init is uniform in +-1/sqrt(fan_in), drawn from a caller-supplied
numpy Generator so whole networks are reproducible from one seed.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Layer:
    def parameters(self):
        return []

    def state_arrays(self):
        """All arrays that define the layer (parameters + running stats)."""
        return [p.data for p in self.parameters()]

    def load_state_arrays(self, arrays):
        own = self.state_arrays()
        for dst, src in zip(own, arrays):
            dst[...] = src

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = Tensor(_uniform(rng, in_dim, (in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(_uniform(rng, in_dim, (out_dim,)), requires_grad=True)

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, x):
        return T.matmul(x, self.w) + self.b


class Conv2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator):
        fan_in = in_ch * k * k
        self.w = Tensor(_uniform(rng, fan_in, (out_ch, in_ch, k, k)), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        self.stride, self.pad = stride, pad

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, x):
        out = T.conv2d(x, self.w, self.stride, self.pad)
        return out + T.reshape(self.b, (1, -1, 1, 1))


class ConvTranspose2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator):
        fan_in = in_ch * k * k
        self.w = Tensor(_uniform(rng, fan_in, (in_ch, out_ch, k, k)), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        self.stride, self.pad = stride, pad

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, x):
        out = T.conv2d_transpose(x, self.w, self.stride, self.pad)
        return out + T.reshape(self.b, (1, -1, 1, 1))


class BatchNorm2d(Layer):
    def __init__(self, ch: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(ch, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(ch, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(ch, dtype=np.float32)
        self.running_var = np.ones(ch, dtype=np.float32)
        self.momentum, self.eps = momentum, eps
        self.training = True

    def parameters(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return [self.gamma.data, self.beta.data, self.running_mean, self.running_var]

    def __call__(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, self.training, self.momentum, self.eps)


class Sequentialish:
    """Mixin for nets that expose a flat list of layers."""

    layers: list

    def parameters(self):
        out = []
        for lay in self.layers:
            out.extend(lay.parameters())
        return out

    def state_arrays(self):
        out = []
        for lay in self.layers:
            out.extend(lay.state_arrays())
        return out

    def load_state_arrays(self, arrays):
        it = iter(arrays)
        for lay in self.layers:
            own = lay.state_arrays()
            for dst in own:
                dst[...] = next(it)

    def set_training(self, flag: bool):
        for lay in self.layers:
            if isinstance(lay, BatchNorm2d):
                lay.training = flag
