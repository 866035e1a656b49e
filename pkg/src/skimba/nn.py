"""Parameters, a minimal module tree, and the layers the networks are built from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is filled in from its module path."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Container with attribute-order parameter discovery.

    Parameters, sub-modules and lists of sub-modules assigned as attributes are
    walked in assignment order, which keeps parameter names stable.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, value in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Module):
                yield from value.named_modules(path)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{path}.{i}")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for mod_path, mod in self.named_modules(prefix):
            for key, value in vars(mod).items():
                if isinstance(value, Parameter):
                    name = f"{mod_path}.{key}" if mod_path else key
                    value.name = name
                    yield name, value

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.astype(p.data.dtype).copy()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
        return self


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(T.get_default_dtype())


class Linear(Module):
    """Affine map over the last axis: ``x @ weight + bias``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        bound = 1.0 / np.sqrt(in_features)
        w = np.zeros((in_features, out_features)) if zero_init else _uniform(rng, (in_features, out_features), bound)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class ConvNd(Module):
    def __init__(self, nsp: int, in_ch: int, out_ch: int, kernel, rng: np.random.Generator,
                 stride=1, padding=None, dilation=1, bias: bool = True, zero_init: bool = False):
        kernel = T._tuple(kernel, nsp)
        dilation = T._tuple(dilation, nsp)
        if padding is None:
            if any(k % 2 == 0 for k in kernel):
                raise ValueError(f"'same' padding needs odd kernels, got {kernel}")
            padding = tuple(d * (k - 1) // 2 for k, d in zip(kernel, dilation))
        self.stride, self.padding, self.dilation = T._tuple(stride, nsp), T._tuple(padding, nsp), dilation
        fan_in = in_ch * int(np.prod(kernel))
        shape = (out_ch, in_ch) + kernel
        self.weight = Parameter(np.zeros(shape) if zero_init else _uniform(rng, shape, 1.0 / np.sqrt(fan_in)))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class Conv3d(ConvNd):
    """3-D convolution; ``padding=None`` means 'same' padding for stride 1."""

    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=None, dilation=1, bias=True, zero_init=False):
        super().__init__(3, in_ch, out_ch, kernel, rng, stride, padding, dilation, bias, zero_init)


class Conv2d(ConvNd):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=None, dilation=1, bias=True, zero_init=False):
        super().__init__(2, in_ch, out_ch, kernel, rng, stride, padding, dilation, bias, zero_init)


class ConvTranspose3d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel, rng: np.random.Generator, stride=2,
                 padding=0, output_padding=0, bias: bool = True):
        kernel = T._tuple(kernel, 3)
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        fan_in = in_ch * int(np.prod(kernel))
        self.weight = Parameter(_uniform(rng, (in_ch, out_ch) + kernel, 1.0 / np.sqrt(fan_in)))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose(x, self.weight, self.bias, self.stride, self.padding,
                                output_padding=self.output_padding)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, 1, self.gain, self.bias)


def to_channels_last(x: Tensor) -> Tensor:
    """(B, C, *spatial) -> (B, *spatial, C)."""
    return T.transpose(x, (0,) + tuple(range(2, x.ndim)) + (1,))


def to_channels_first(x: Tensor) -> Tensor:
    return T.transpose(x, (0, x.ndim - 1) + tuple(range(1, x.ndim - 1)))
