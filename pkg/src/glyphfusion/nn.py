"""Small layer objects built on the tensor ops, with named parameters."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Module:
    """Container that discovers parameters through attributes.

    Attributes holding a ``Tensor`` with ``requires_grad`` or ``frozen`` set,
    a ``Module``, or a list of modules are walked in attribute-definition
    order, which keeps parameter naming stable for checkpoints.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and (value.requires_grad or value.frozen):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True
            p.requires_grad = False
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def astype(self, dtype) -> None:
        for p in self.parameters():
            p.data = p.data.astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int | None = None, zero: bool = False,
                 gain: float = math.sqrt(2.0)):
        # He-style scale keeps activations from shrinking through SiLU stacks
        bound = gain * math.sqrt(3.0 / (c_in * k * k))
        dtype = T.get_default_dtype()
        w = np.zeros((c_out, c_in, k, k)) if zero else rng.uniform(-bound, bound, (c_out, c_in, k, k))
        self.weight = _param(w.astype(dtype))
        self.bias = _param(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False,
                 gain: float = math.sqrt(2.0)):
        bound = gain * math.sqrt(3.0 / d_in)
        dtype = T.get_default_dtype()
        w = np.zeros((d_out, d_in)) if zero else rng.uniform(-bound, bound, (d_out, d_in))
        self.weight = _param(w.astype(dtype))
        self.bias = _param(np.zeros(d_out, dtype=dtype))

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int):
        dtype = T.get_default_dtype()
        self.groups = groups
        self.gamma = _param(np.ones(channels, dtype=dtype))
        self.beta = _param(np.zeros(channels, dtype=dtype))

    def __call__(self, x):
        return T.group_norm(x, self.groups, self.gamma, self.beta)
