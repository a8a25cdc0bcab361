"""SGD with momentum and the cosine learning-rate schedule."""
from __future__ import annotations

import math

import numpy as np


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    if lr0 <= 0:
        raise ValueError("lr0 must be positive")
    if total_epochs <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * min(epoch, total_epochs) / total_epochs))


def sgd_step(params, grads, lr, momentum=0.0, weight_decay=0.0, buffers=None, lr_scale=None):
    """Update ``params`` in place: v <- m*v + (g + wd*p); p <- p - lr*v.

    ``buffers`` holds one velocity array per parameter (created on demand) and
    is returned so callers can keep it between steps. ``weight_decay`` may be a
    scalar or a per-parameter sequence; ``lr_scale`` an optional per-parameter
    learning-rate multiplier.
    """
    if buffers is None:
        buffers = [None] * len(params)
    wds = weight_decay if isinstance(weight_decay, (list, tuple)) else [weight_decay] * len(params)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        d = g + wds[i] * p.data if wds[i] else g
        if momentum:
            if buffers[i] is None:
                buffers[i] = np.array(d, copy=True)
            else:
                buffers[i] *= momentum
                buffers[i] += d
            d = buffers[i]
        step = lr * lr_scale[i] if lr_scale is not None else lr
        p.data -= (step * d).astype(p.data.dtype, copy=False)
    return buffers


class SGD:
    def __init__(self, named_params, momentum=0.9, weight_decay=0.0, no_decay=lambda name: False,
                 lr_scale=lambda name: 1.0):
        named = list(named_params)
        self.names = [n for n, _ in named]
        self.params = [p for _, p in named]
        self.momentum = momentum
        self.weight_decay = [0.0 if no_decay(n) else weight_decay for n in self.names]
        self.lr_scale = [lr_scale(n) for n in self.names]
        self.buffers = [None] * len(self.params)

    def step(self, lr: float) -> None:
        self.buffers = sgd_step(self.params, [p.grad for p in self.params], lr,
                                self.momentum, self.weight_decay, self.buffers, self.lr_scale)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
