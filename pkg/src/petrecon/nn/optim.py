"""SGD with momentum and Adam, as in-place updates on parameter arrays."""
from __future__ import annotations

import numpy as np


def sgd_momentum_step(w, grad, v, lr, momentum=0.9):
    """``v <- momentum * v + grad``; ``w <- w - lr * v`` (both in place)."""
    v *= momentum
    v += grad
    w -= lr * v


def adam_step(w, grad, m, u, lr, t, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update at step ``t`` (1-based), in place."""
    m *= beta1
    m += (1 - beta1) * grad
    u *= beta2
    u += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    u_hat = u / (1 - beta2**t)
    w -= lr * m_hat / (np.sqrt(u_hat) + eps)


class SGD:
    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            sgd_momentum_step(p.value, p.grad, v, self.lr, self.momentum)

    def zero_grad(self):
        for p in self.params:
            p.grad.fill(0)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = (beta1, beta2)
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.u = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        for p, m, u in zip(self.params, self.m, self.u):
            adam_step(p.value, p.grad, m, u, self.lr, self.t, *self.betas, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad.fill(0)


def make_optimizer(name: str, params, lr, momentum=0.9):
    if name == "sgd":
        return SGD(params, lr, momentum)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
