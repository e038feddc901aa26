"""Parameter containers and the small layer set the model is built from."""

from __future__ import annotations

import contextlib
from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype

INIT_STD = 0.02
_init_std = INIT_STD


@contextlib.contextmanager
def init_std(std: float):
    """Default std of ``normal_init`` inside the block."""
    global _init_std
    prev = _init_std
    _init_std = std
    try:
        yield
    finally:
        _init_std = prev


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, dtype=dtype or get_default_dtype())


def normal_init(rng: np.random.Generator, shape, std: Optional[float] = None, dtype=None) -> Tensor:
    return parameter(rng.normal(0.0, _init_std if std is None else std, size=shape), dtype=dtype)


def fan_in_std(d_in: int) -> float:
    """He-style scale for layers feeding a GELU."""
    return float(np.sqrt(2.0 / d_in))


def zeros_init(shape, dtype=None) -> Tensor:
    return parameter(np.zeros(shape), dtype=dtype)


def ones_init(shape, dtype=None) -> Tensor:
    return parameter(np.ones(shape), dtype=dtype)


class Module:
    """Attribute-registered parameters and submodules, walked in insertion order."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        unknown = sorted(set(state) - set(own))
        if unknown:
            raise KeyError(f"unknown tensor name {unknown[0]!r}")
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing tensor {missing[0]!r}")
        for name, arr in state.items():
            p = own[name]
            if tuple(arr.shape) != p.shape:
                raise ValueError(f"dimension mismatch for tensor {name!r}: "
                                 f"file has {tuple(arr.shape)}, model expects {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: Optional[float] = None):
        self.weight = normal_init(rng, (d_in, d_out), std)
        self.bias = zeros_init((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = ones_init((d,))
        self.beta = zeros_init((d,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class GroupNorm(Module):
    """Group normalization on channels-last (N, S, C) activations."""

    def __init__(self, groups: int, channels: int, eps: float = 1e-5):
        if channels % groups:
            raise ValueError(f"{channels} channels do not split into {groups} groups")
        self.groups = groups
        self.gamma = ones_init((channels,))
        self.beta = zeros_init((channels,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        n, s, c = x.shape
        g = self.groups
        y = x.reshape(n, s, g, c // g).transpose(0, 2, 1, 3).reshape(n, g, s * (c // g))
        y = ops.layer_norm(y, eps=self.eps)
        y = y.reshape(n, g, s, c // g).transpose(0, 2, 1, 3).reshape(n, s, c)
        return ops.add(ops.mul(y, self.gamma), self.beta)


def set_requires_grad(module: Module, flag: bool) -> None:
    """Freeze (``False``) or unfreeze every parameter of ``module``."""
    for p in module.parameters():
        p.requires_grad = flag


def rng_from(seed: Optional[int], stream: int = 0) -> np.random.Generator:
    """Independent generator for ``stream`` derived from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))
