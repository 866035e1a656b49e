"""Latent diffusion: noise schedule, forward noising, epsilon objective, ancestral sampler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .blocks import MSCB
from .nn import Conv3d, Linear, Module
from .tensor import Tensor

DEFAULT_STEPS = 100


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or not len(b) or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must be a non-empty vector in (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, steps: int = DEFAULT_STEPS, beta_start: float | None = None,
               beta_end: float | None = None) -> "NoiseSchedule":
        """Linear betas; the 1e-4..0.02 range of a 1000-step chain rescaled to ``steps``."""
        scale = 1000.0 / steps
        beta_start = 1e-4 * scale if beta_start is None else beta_start
        beta_end = 0.02 * scale if beta_end is None else beta_end
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar(self, t) -> np.ndarray:
        """alpha_bar at 1-based step ``t``; ``t = 0`` gives 1."""
        t = np.asarray(t)
        return np.where(t == 0, 1.0, self.alpha_bars[np.maximum(t, 1) - 1])

    def check_step(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep must lie in [1, {self.T}], got {t}")


def _per_sample(values: np.ndarray, x: Tensor) -> np.ndarray:
    v = np.asarray(values, dtype=x.dtype)
    return v.reshape(v.shape + (1,) * (x.ndim - v.ndim))


def forward_diffuse(schedule: NoiseSchedule, x0: Tensor, t, noise: Tensor) -> Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise; ``t`` is an int or one per batch entry."""
    schedule.check_step(t)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != latent shape {x0.shape}")
    ab = schedule.alpha_bar(t)
    return x0 * _per_sample(np.sqrt(ab), x0) + noise * _per_sample(np.sqrt(1.0 - ab), x0)


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


class MSCBFuse(Module):
    """Concatenate noisy latent and condition, add a per-channel timestep embedding, apply MSCB.

    With ``use_mscb=False`` the MSCB is replaced by a 1x1x1 projection.
    """

    def __init__(self, latent_channels: int, cond_channels: int, out_channels: int, rng: np.random.Generator,
                 use_mscb: bool = True, time_dim: int = 32):
        self.time_dim = time_dim
        fused = latent_channels + cond_channels
        self.time_proj = Linear(time_dim, fused, rng)
        if use_mscb:
            self.mscb = MSCB(fused, out_channels, rng, effective_kernel=5)
        else:
            self.proj = Conv3d(fused, out_channels, 1, rng)

    def forward(self, x_t: Tensor, cond: Tensor, t) -> Tensor:
        if x_t.shape[0] != cond.shape[0] or x_t.shape[2:] != cond.shape[2:]:
            raise ValueError(f"latent {x_t.shape} and condition {cond.shape} geometries differ")
        h = T.concat([x_t, cond], axis=1)
        t = np.broadcast_to(np.atleast_1d(t), (x_t.shape[0],))
        emb = self.time_proj(Tensor(timestep_embedding(t, self.time_dim), dtype=x_t.dtype))
        h = h + T.reshape(emb, emb.shape + (1, 1, 1))
        return self.mscb(h) if hasattr(self, "mscb") else self.proj(h)


class EpsilonModel(Module):
    """eps_theta(x_t, t, condition): MSCB fusion followed by the denoising network."""

    def __init__(self, fuse: MSCBFuse, denoiser: Module):
        self.fuse = fuse
        self.denoiser = denoiser

    def forward(self, x_t: Tensor, t, cond: Tensor) -> Tensor:
        return self.denoiser(self.fuse(x_t, cond, t))


def denoise_loss(network: Callable, schedule: NoiseSchedule, x0: Tensor, cond: Tensor,
                 rng: np.random.Generator) -> Tensor:
    """Mean squared error between injected and predicted noise at a uniformly drawn step."""
    B = x0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = Tensor(rng.standard_normal(x0.shape), dtype=x0.dtype)
    x_t = forward_diffuse(schedule, x0, t, eps)
    pred = network(x_t, t, cond)
    diff = pred - eps
    return (diff * diff).mean()


def sample(network: Callable, schedule: NoiseSchedule, cond: Tensor, shape, rng: np.random.Generator) -> Tensor:
    """Ancestral sampling from x_T ~ N(0, I) through all ``schedule.T`` steps; sigma_t = sqrt(beta_t)."""
    betas, alphas, abars = schedule.betas, schedule.alphas, schedule.alpha_bars
    dtype = T.get_default_dtype() if cond is None else cond.dtype
    x = rng.standard_normal(shape).astype(dtype)
    with T.no_grad():
        for t in range(schedule.T, 0, -1):
            eps = network(Tensor(x, dtype=dtype), np.full(shape[0], t), cond).data
            mean = (x - betas[t - 1] / np.sqrt(1.0 - abars[t - 1]) * eps) / np.sqrt(alphas[t - 1])
            if t > 1:
                mean = mean + np.sqrt(betas[t - 1]) * rng.standard_normal(shape)
            x = mean.astype(dtype)
    return Tensor(x, dtype=dtype)
