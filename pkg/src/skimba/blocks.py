"""Convolutional building blocks: DDR, Semantic Block, MSCB, down/up-sampling, ConvResblock."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv3d, ConvTranspose3d, Module
from .tensor import Tensor

LEAK = 0.01


@dataclass
class BlockConfig:
    in_channels: int
    out_channels: int
    kernel: int = 3
    dilations: list[int] = field(default_factory=lambda: [1])
    stride: int = 1

    def __post_init__(self):
        if self.in_channels <= 0 or self.out_channels <= 0 or self.stride <= 0:
            raise ValueError("channel counts and stride must be positive")
        if self.kernel <= 0 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd integer, got {self.kernel}")
        if not self.dilations or any(d <= 0 for d in self.dilations):
            raise ValueError("dilation rates must be a non-empty list of positive integers")


class DDRBlock(Module):
    """k^3 convolution factored into 1x1xk, 1xkx1 and kx1x1 convolutions plus a residual.

    The three factors run along H, then W, then L.
    """

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dilation: int | None = None,
                 zero_init: bool = False):
        k = cfg.kernel
        d = cfg.dilations[0] if dilation is None else dilation
        cin, cout = cfg.in_channels, cfg.out_channels
        self.conv_h = Conv3d(cin, cout, (1, 1, k), rng, dilation=(1, 1, d), zero_init=zero_init)
        self.conv_w = Conv3d(cout, cout, (1, k, 1), rng, dilation=(1, d, 1), zero_init=zero_init)
        self.conv_l = Conv3d(cout, cout, (k, 1, 1), rng, dilation=(d, 1, 1), zero_init=zero_init)
        self.proj = Conv3d(cin, cout, 1, rng) if cin != cout else None

    def decomposed_weight_count(self) -> int:
        return sum(c.weight.size for c in (self.conv_h, self.conv_w, self.conv_l))

    def forward(self, x: Tensor) -> Tensor:
        y = T.leaky_relu(self.conv_h(x), LEAK)
        y = T.leaky_relu(self.conv_w(y), LEAK)
        y = self.conv_l(y)
        res = self.proj(x) if self.proj is not None else x
        if res.shape != y.shape:
            raise ValueError(f"DDR residual shape {res.shape} != branch shape {y.shape}")
        return y + res


def full_kernel_weight_count(cin: int, cout: int, k: int) -> int:
    return cin * cout * k ** 3


class SemanticBlock(Module):
    """Parallel DDR branches at several dilation rates, summed."""

    def __init__(self, channels: int, rng: np.random.Generator, dilations=(1, 2, 3), kernel: int = 3,
                 zero_init: bool = False):
        cfg = BlockConfig(channels, channels, kernel, list(dilations))
        self.branches = [DDRBlock(cfg, rng, dilation=d, zero_init=zero_init) for d in cfg.dilations]

    def forward(self, x: Tensor) -> Tensor:
        out = None
        for branch in self.branches:
            y = branch(x)
            out = y if out is None else out + y
        return out


MSCB_DEPTH = {5: 2, 7: 3}


def cost_report(effective_kernel: int, channels: int) -> tuple[int, int]:
    """Multiply count per output voxel: (stacked 3x3x3 convolutions, single full kernel)."""
    if effective_kernel not in MSCB_DEPTH:
        raise ValueError(f"unsupported effective kernel {effective_kernel}; expected 5 or 7")
    return MSCB_DEPTH[effective_kernel] * 27 * channels ** 2, effective_kernel ** 3 * channels ** 2


class MSCB(Module):
    """Stacked 3x3x3 convolutions standing in for a 5^3 (two layers) or 7^3 (three layers) kernel.

    The stack is linear, so it spans the same receptive field as the full kernel
    it replaces; callers add their own nonlinearity.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, effective_kernel: int = 5):
        if effective_kernel not in MSCB_DEPTH:
            raise ValueError(f"unsupported effective kernel {effective_kernel}; expected 5 or 7")
        self.effective_kernel = effective_kernel
        n = MSCB_DEPTH[effective_kernel]
        self.convs = [Conv3d(in_channels if i == 0 else out_channels, out_channels, 3, rng) for i in range(n)]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = conv(x)
        return x


def _check_even(x: Tensor, what: str) -> None:
    sp = x.shape[-3:]
    if any(n % 2 for n in sp):
        raise ValueError(f"{what}: spatial extents {sp} must all be even to halve cleanly")


class ResidualConvBlock(Module):
    """Three 3x3x3 conv + instance-norm layers (LeakyReLU after the first) with a bypass.

    The bypass skips the convolution stack and joins the third layer's output
    before the final LeakyReLU. ``stride=2`` gives the down-sampling block,
    ``stride=1`` the ConvResblock.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, stride: int = 1):
        self.stride = stride
        self.conv1 = Conv3d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.conv2 = Conv3d(out_channels, out_channels, 3, rng)
        self.conv3 = Conv3d(out_channels, out_channels, 3, rng)
        if stride != 1 or in_channels != out_channels:
            self.bypass = Conv3d(in_channels, out_channels, 1, rng, stride=stride, padding=0)
        else:
            self.bypass = None

    def forward(self, x: Tensor) -> Tensor:
        if self.stride != 1:
            _check_even(x, "downsample")
        y = T.leaky_relu(T.instance_norm(self.conv1(x)), LEAK)
        y = T.instance_norm(self.conv2(y))
        y = T.instance_norm(self.conv3(y))
        res = self.bypass(x) if self.bypass is not None else x
        return T.leaky_relu(y + res, LEAK)


class DownsampleBlock(ResidualConvBlock):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__(in_channels, out_channels, rng, stride=2)


class ConvResBlock(ResidualConvBlock):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__(in_channels, out_channels, rng, stride=1)


class UpsampleBlock(Module):
    """Stride-2 transposed convolution followed by the ConvResblock topology."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.up = ConvTranspose3d(in_channels, out_channels, 2, rng, stride=2)
        self.body = ConvResBlock(out_channels, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.body(self.up(x))
