"""Parameter containers and the few layer types the model is built from."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .tensor import Tensor, ops


class Module:
    """Walks attributes to find parameters (grad leaves) and buffers.

    Attribute order defines parameter order, so two models built with the
    same config enumerate identical names.
    """

    training: bool = True

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_tensors(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{name}.{i}.")

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self.named_tensors() if t.requires_grad)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, t in own.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data[...] = arr

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        for _, t in self.named_tensors():
            t.data = t.data.astype(dtype)
        return self


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until every entry lies within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2
    return out * std


def param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def buffer(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=False)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float32,
                 bias: bool = True):
        self.weight = param(trunc_normal(rng, (fan_in, fan_out)), dtype)
        self.bias = param(np.zeros(fan_out), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Fan-in uniform init (bound 1/sqrt(fan_in)) for weights and bias."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, dtype=np.float32,
                 stride: int = 1, pad: Optional[int] = None):
        bound = 1.0 / math.sqrt(cin * k * k)
        self.weight = param(rng.uniform(-bound, bound, (cout, cin, k, k)), dtype)
        self.bias = param(rng.uniform(-bound, bound, cout), dtype)
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.weight = param(np.ones(dim), dtype)
        self.bias = param(np.zeros(dim), dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm2d(Module):
    def __init__(self, c: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = param(np.ones(c), dtype)
        self.bias = param(np.zeros(c), dtype)
        self.running_mean = buffer(np.zeros(c), dtype)
        self.running_var = buffer(np.ones(c), dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.running_mean.data, self.running_var.data,
                              self.weight, self.bias, self.training, self.momentum, self.eps)


def zero_(module: Module) -> Module:
    """Zero every parameter (buffers keep their values)."""
    for _, t in module.named_parameters():
        t.data[...] = 0
    return module
