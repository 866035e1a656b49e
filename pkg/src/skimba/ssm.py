"""Selective state-space scans, dilated (skip) scans, STM layers and the Skimba block.

Tokens are channels-last: (..., S, C). Volumes entering :class:`SkimbaBlock`
are channels-first (B, C, L, W, H) like every other block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, Parameter, to_channels_first, to_channels_last
from .tensor import Tensor

DIRECTIONS = ("forward", "reverse", "spatial")
SKIP_DILATIONS = (0, 1, 3)


def discretize(A, B, delta):
    """Zero-order hold on ``A`` and the Euler step on ``B``.

    ``A``: (C, N) negative, ``B``: (..., N), ``delta``: (..., C). Returns
    ``(exp(delta*A), delta*B)`` with shapes (..., C, N). Works on arrays or
    tensors.
    """
    dvals = delta.data if isinstance(delta, Tensor) else np.asarray(delta)
    if np.any(dvals <= 0):
        raise ValueError("discretize: step sizes must be strictly positive")
    if isinstance(delta, Tensor):
        d = T.reshape(delta, delta.shape + (1,))
        b = T.reshape(B, B.shape[:-1] + (1, B.shape[-1]))
        return T.exp(d * A), d * b
    delta = np.asarray(delta)[..., None]
    return np.exp(delta * np.asarray(A)), delta * np.asarray(B)[..., None, :]


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D: Tensor) -> Tensor:
    """Run ``h_t = exp(d_t A) h_{t-1} + d_t B_t u_t``, ``y_t = C_t . h_t + D u_t`` along axis -2.

    u, delta: (..., S, Ch); B, C: (..., S, N); A: (Ch, N) (leading axes may
    broadcast against the batch axes); D: (Ch,). The recurrence is evaluated
    sequentially and differentiated by the reverse recurrence.
    """
    ud, dd, Ad, Bd, Cd, Dd = u.data, delta.data, A.data, B.data, C.data, D.data
    if ud.shape != dd.shape:
        raise ValueError(f"selective_scan: u {ud.shape} and delta {dd.shape} differ")
    if Ad.shape[-2] != ud.shape[-1]:
        raise ValueError(f"selective_scan: A has {Ad.shape[-2]} channels, tokens have {ud.shape[-1]}")
    S = ud.shape[-2]
    u_ = np.moveaxis(ud, -2, 0)
    d_ = np.moveaxis(dd, -2, 0)
    B_ = np.moveaxis(Bd, -2, 0)[..., None, :]
    C_ = np.moveaxis(Cd, -2, 0)[..., None, :]
    dA = np.exp(d_[..., None] * Ad)
    du = d_ * u_
    dBu = du[..., None] * B_
    hs = np.empty(np.broadcast_shapes(dA.shape, dBu.shape), dtype=ud.dtype)
    h = np.zeros(hs.shape[1:], dtype=ud.dtype)
    for t in range(S):
        h = dA[t] * h + dBu[t]
        hs[t] = h
    y_ = (hs * C_).sum(-1) + u_ * Dd
    out = np.moveaxis(y_, 0, -2)

    def backward(g):
        gy = np.moveaxis(g, -2, 0)
        gh_y = gy[..., None] * C_
        ghs = np.empty_like(hs)
        carry = np.zeros(hs.shape[1:], dtype=hs.dtype)
        for t in range(S - 1, -1, -1):
            gh = gh_y[t] + carry
            ghs[t] = gh
            carry = dA[t] * gh
        h_prev = np.concatenate([np.zeros_like(hs[:1]), hs[:-1]], axis=0)
        g_dAx = ghs * h_prev * dA
        ghB = (ghs * B_).sum(-1)
        g_delta = (g_dAx * Ad).sum(-1) + ghB * u_
        g_u = ghB * d_ + gy * Dd
        g_A = T._unbroadcast(g_dAx * d_[..., None], Ad.shape)
        g_B = (ghs * du[..., None]).sum(-2)
        g_C = (gy[..., None] * hs).sum(-2)
        g_D = T._unbroadcast(gy * u_, Dd.shape)
        back = lambda a, shape: T._unbroadcast(np.moveaxis(a, 0, -2), shape)
        return (back(g_u, ud.shape), back(g_delta, dd.shape), g_A,
                back(g_B, Bd.shape), back(g_C, Cd.shape), g_D)

    return Tensor._make(out, (u, delta, A, B, C, D), backward)


class ScanParams(Module):
    """Per-direction state-space parameters.

    ``A = -exp(A_log)`` keeps the recurrence stable and ``softplus`` keeps the
    per-token step positive.
    """

    def __init__(self, channels: int, state_size: int, rng: np.random.Generator, zero_out: bool = False,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        self.channels, self.state_size = channels, state_size
        self.in_proj = Linear(channels, channels, rng)
        self.delta_proj = Linear(channels, channels, rng)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=channels))
        self.delta_proj.bias.data = (dt + np.log(-np.expm1(-dt))).astype(self.delta_proj.bias.dtype)
        self.B_proj = Linear(channels, state_size, rng, bias=False)
        self.C_proj = Linear(channels, state_size, rng, bias=False)
        self.A_log = Parameter(np.log(np.tile(np.arange(1, state_size + 1, dtype=np.float64), (channels, 1))))
        self.D_skip = Parameter(np.ones(channels))
        self.out_proj = Linear(channels, channels, rng, zero_init=zero_out)

    def A(self) -> Tensor:
        return -T.exp(self.A_log)

    def project_in(self, tokens: Tensor) -> Tensor:
        return T.silu(self.in_proj(tokens))

    def project_out(self, tokens: Tensor) -> Tensor:
        return self.out_proj(tokens)


def sequential_scan(params: ScanParams, x: Tensor) -> Tensor:
    """Selective scan of already in-projected tokens ``x`` (..., S, C)."""
    if x.shape[-1] != params.channels:
        raise ValueError(f"sequential_scan: tokens have {x.shape[-1]} channels, params expect {params.channels}")
    delta = T.softplus(params.delta_proj(x))
    return selective_scan(x, delta, params.A(), params.B_proj(x), params.C_proj(x), params.D_skip)


def dilated_scan(params: ScanParams, x: Tensor, dilation: int) -> Tensor:
    """Scan the ``dilation + 1`` interleaved subsequences of ``x`` independently.

    Subsequence ``r`` holds tokens ``r, r + s, r + 2s, ...`` with ``s = dilation + 1``;
    all share ``params`` and outputs return to their original positions.
    """
    if dilation not in SKIP_DILATIONS:
        raise ValueError(f"unsupported dilation {dilation}; expected one of {SKIP_DILATIONS}")
    stride = dilation + 1
    S = x.shape[-2]
    if stride == 1 or S == 1:
        return sequential_scan(params, x)
    m = -(-S // stride)
    lead = x.shape[:-2]
    C = x.shape[-1]
    xp = T.pad(x, [(0, 0)] * len(lead) + [(0, m * stride - S), (0, 0)]) if m * stride != S else x
    n = len(lead)
    xs = T.reshape(xp, lead + (m, stride, C))
    perm = tuple(range(n)) + (n + 1, n, n + 2)
    ys = sequential_scan(params, T.transpose(xs, perm))
    y = T.reshape(T.transpose(ys, perm), lead + (m * stride, C))
    return y[(slice(None),) * n + (slice(0, S),)] if m * stride != S else y


@dataclass
class DirectionalSequence:
    tokens: Tensor          # (B, S, C)
    direction: str
    origin_shape: tuple[int, int, int]


def _flatten_cl(vol: Tensor, direction: str) -> Tensor:
    """Channels-last volume (B, L, W, H, C) -> tokens (B, S, C)."""
    B, L, W, H, C = vol.shape
    if direction == "forward":
        return T.reshape(vol, (B, L * W * H, C))
    if direction == "reverse":
        return T.flip(T.reshape(vol, (B, L * W * H, C)), 1)
    if direction == "spatial":
        return T.reshape(T.transpose(vol, (0, 3, 1, 2, 4)), (B, L * W * H, C))
    raise ValueError(f"unknown direction {direction!r}")


def _unflatten_cl(tokens: Tensor, direction: str, shape: tuple[int, int, int]) -> Tensor:
    B, _, C = tokens.shape
    L, W, H = shape
    if direction == "forward":
        return T.reshape(tokens, (B, L, W, H, C))
    if direction == "reverse":
        return T.reshape(T.flip(tokens, 1), (B, L, W, H, C))
    if direction == "spatial":
        return T.transpose(T.reshape(tokens, (B, H, L, W, C)), (0, 2, 3, 1, 4))
    raise ValueError(f"unknown direction {direction!r}")


def flatten_direction(vol: Tensor, direction: str) -> DirectionalSequence:
    """Flatten a (C, L, W, H) or (B, C, L, W, H) volume into an ordered token sequence."""
    if vol.ndim == 4:
        vol = T.reshape(vol, (1,) + vol.shape)
    return DirectionalSequence(_flatten_cl(to_channels_last(vol), direction), direction, tuple(vol.shape[2:]))


def unflatten_direction(seq: DirectionalSequence) -> Tensor:
    """Inverse of :func:`flatten_direction`; always returns a batched (B, C, L, W, H) volume."""
    return to_channels_first(_unflatten_cl(seq.tokens, seq.direction, seq.origin_shape))


class STMLayer(Module):
    """Skip Triple Mamba layer: forward + reverse + spatial dilated scans at one dilation."""

    def __init__(self, channels: int, state_size: int, dilation: int, rng: np.random.Generator,
                 zero_out: bool = False):
        if dilation not in SKIP_DILATIONS:
            raise ValueError(f"unsupported dilation {dilation}")
        self.dilation = dilation
        self.forward_scan = ScanParams(channels, state_size, rng, zero_out)
        self.reverse_scan = ScanParams(channels, state_size, rng, zero_out)
        self.spatial_scan = ScanParams(channels, state_size, rng, zero_out)

    def directional(self, z_cl: Tensor, direction: str) -> Tensor:
        params = {"forward": self.forward_scan, "reverse": self.reverse_scan, "spatial": self.spatial_scan}[direction]
        tokens = _flatten_cl(z_cl, direction)
        y = params.project_out(dilated_scan(params, params.project_in(tokens), self.dilation))
        return _unflatten_cl(y, direction, z_cl.shape[1:4])

    def forward(self, z_cl: Tensor) -> Tensor:
        """``z_cl``: channels-last volume (B, L, W, H, C)."""
        out = None
        for direction in DIRECTIONS:
            part = self.directional(z_cl, direction)
            if out is not None and part.shape != out.shape:
                raise ValueError(f"STM {direction} output {part.shape} != {out.shape}")
            out = part if out is None else out + part
        return out


def stm_layer(layer: STMLayer, z: Tensor) -> Tensor:
    """Channels-first convenience wrapper: (B, C, L, W, H) -> same shape."""
    return to_channels_first(layer(to_channels_last(z)))


class SkimbaBlock(Module):
    """Sum of STM layers at dilations 0, 1, 3 inside a pre-norm residual, then an MLP residual."""

    def __init__(self, channels: int, rng: np.random.Generator, state_size: int = 8, mlp_ratio: int = 2,
                 zero_init: bool = False):
        self.dilations = SKIP_DILATIONS
        self.norm_in = LayerNorm(channels)
        self.stm = [STMLayer(channels, state_size, d, rng, zero_out=zero_init) for d in self.dilations]
        self.norm_mlp = LayerNorm(channels)
        self.mlp_in = Linear(channels, mlp_ratio * channels, rng)
        self.mlp_out = Linear(mlp_ratio * channels, channels, rng, zero_init=zero_init)

    def forward(self, f_initial: Tensor) -> Tensor:
        squeeze = f_initial.ndim == 4
        if squeeze:
            f_initial = T.reshape(f_initial, (1,) + f_initial.shape)
        x = to_channels_last(f_initial)
        z = self.norm_in(x)
        psi_all = None
        for layer in self.stm:
            psi = layer(z)
            psi_all = psi if psi_all is None else psi_all + psi
        phi_in = psi_all + x
        phi_all = self.mlp_out(T.silu(self.mlp_in(self.norm_mlp(phi_in)))) + phi_in
        out = to_channels_first(phi_all)
        return T.reshape(out, out.shape[1:]) if squeeze else out
