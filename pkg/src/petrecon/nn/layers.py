"""Stateful layers wrapping the functional kernels (channels-last tensors)."""
from __future__ import annotations

import numpy as np

from . import functional as F


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


class Layer:
    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, shape):
        return shape


class Conv2d(Layer):
    def __init__(self, name, cin, cout, stride=1, bias=False, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / (cin * 9))  # He-uniform, fan-in
        self.weight = Parameter(f"{name}.weight", rng.uniform(-bound, bound, (3, 3, cin, cout)).astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(cout, dtype)) if bias else None
        self.stride = stride
        self._cache = None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train=False):
        b = self.bias.value if self.bias is not None else None
        out, cache = F.conv2d_forward(x, self.weight.value, b, self.stride)
        self._cache = cache if train else None
        return out

    def backward(self, dy):
        dx, dw, db = F.conv2d_backward(dy, self._cache)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        self._cache = None
        return dx

    def output_shape(self, shape):
        h, w, _ = shape
        return (F.conv_out_size(h, self.stride), F.conv_out_size(w, self.stride), self.weight.value.shape[3])


class BatchNorm2d(Layer):
    def __init__(self, name, channels, momentum=0.2, dtype=np.float32):
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum = momentum
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def forward(self, x, train=False):
        out, cache = F.batchnorm_forward(x, self.gamma.value, self.beta.value, self.running_mean,
                                         self.running_var, self.momentum, train)
        self._cache = cache if train else None
        return out

    def backward(self, dy):
        dx, dg, db = F.batchnorm_backward(dy, self._cache)
        self.gamma.grad += dg
        self.beta.grad += db
        self._cache = None
        return dx


class ReLU(Layer):
    def forward(self, x, train=False):
        out, mask = F.relu_forward(x)
        self._mask = mask if train else None
        return out

    def backward(self, dy):
        dx = F.relu_backward(dy, self._mask)
        self._mask = None
        return dx


class Upsample(Layer):
    def __init__(self, out_h, out_w):
        self.size = (int(out_h), int(out_w))
        self._cache = None

    def forward(self, x, train=False):
        out, cache = F.upsample_forward(x, *self.size)
        self._cache = cache if train else None
        return out

    def backward(self, dy):
        dx = F.upsample_backward(dy, self._cache)
        self._cache = None
        return dx

    def output_shape(self, shape):
        return self.size + (shape[2],)
