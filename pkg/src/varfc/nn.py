"""Module containers and the layers built on :mod:`varfc.tensor`."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor; its name is the dotted path inside the owning model."""

    __slots__ = ()

    def __init__(self, data):
        arr = np.array(data)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        super().__init__(arr, requires_grad=True)


class Module:
    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(m, Module) for m in val):
                for i, m in enumerate(val):
                    yield f"{name}.{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + name, val
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.named_parameters():
            if name in out:
                raise ValueError(f"duplicate parameter name {name}")
            out[name] = p.data
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: float) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=None, groups=1, bias=True,
                 zero_init=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.groups = stride, groups
        self.padding = k // 2 if padding is None else padding
        shape = (cout, cin // groups, k, k)
        w = np.zeros(shape, np.float32) if zero_init else he_normal(rng, shape, cin // groups * k * k)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride=2, padding=1, output_padding=1, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        shape = (cin, cout, k, k)
        self.weight = Parameter(he_normal(rng, shape, cin * k * k / (stride * stride)))
        self.bias = Parameter(np.zeros(cout, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class Linear(Module):
    def __init__(self, fin, fout, bias=True, zero_init=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        w = np.zeros((fout, fin), np.float32) if zero_init else he_normal(rng, (fout, fin), fin)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(fout, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)
