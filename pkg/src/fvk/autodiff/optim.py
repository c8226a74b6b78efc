"""Gradient-descent and adaptive-moment optimizers with step-count annealing."""

import numpy as np

from .. import _kernels
from .._kernels import _numpy as _pyk


class NumericsError(RuntimeError):
    """Raised when a gradient or loss stops being finite."""


class Optimizer:
    """Base: holds named parameters, a step counter and the annealing schedule.

    The effective learning rate after ``k * anneal_interval`` steps is
    ``lr * anneal ** k``.
    """

    def __init__(self, params, lr, anneal=1.0, anneal_interval=None):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 < anneal <= 1.0:
            raise ValueError("anneal must be in (0, 1]")
        self.params = dict(params)
        self.lr = float(lr)
        self.anneal = float(anneal)
        self.anneal_interval = anneal_interval
        self.step_count = 0

    @property
    def effective_lr(self):
        if not self.anneal_interval:
            return self.lr
        return self.lr * self.anneal ** (self.step_count // self.anneal_interval)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        lr = self.effective_lr
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NumericsError(f"non-finite gradient in parameter '{name}'")
            self._update(name, p, lr)
        self.step_count += 1

    def _update(self, name, p, lr):
        raise NotImplementedError


class Sgd(Optimizer):
    """Plain gradient descent."""

    def _update(self, name, p, lr):
        p.data -= (lr * p.grad).astype(p.data.dtype, copy=False)


class Adam(Optimizer):
    """Adaptive-moment estimation with bias correction."""

    def __init__(self, params, lr, anneal=1.0, anneal_interval=None,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr, anneal, anneal_interval)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def _update(self, name, p, lr):
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        kern = _kernels.kernels if p.data.dtype == np.float32 else _pyk
        g = np.ascontiguousarray(p.grad, dtype=p.data.dtype)
        kern.adam_step(p.data, g, self._m[name], self._v[name],
                       lr, self.beta1, self.beta2, self.eps, bc1, bc2)


def clip_grad_norm(params, max_norm):
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = np.sqrt(sq)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def clip_grad_value(params, max_value):
    """Clamp every gradient entry into [-max_value, max_value]."""
    for p in params.values():
        if p.grad is not None:
            np.clip(p.grad, -max_value, max_value, out=p.grad)
