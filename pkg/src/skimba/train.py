"""AdamW, the warmup-cosine schedule, and the three training stages (VAE, diffusion, segmenter)."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import checkpoint
from . import tensor as T
from .diffusion import denoise_loss
from .losses import combined_seg_loss, kl_divergence
from .nn import Module, Parameter
from .tensor import Tensor


class WarmupCosine:
    """Linear warmup over the first ``warmup_frac`` of steps, then cosine decay to ``final_frac * peak``."""

    def __init__(self, peak: float, total_steps: int, warmup_frac: float = 0.05, final_frac: float = 0.01):
        if total_steps <= 0:
            raise ValueError("total_steps must be positive")
        self.peak, self.total = peak, total_steps
        self.warmup = max(1, int(round(warmup_frac * total_steps)))
        self.final = final_frac * peak

    def __call__(self, step: int) -> float:
        if step < self.warmup:
            return self.peak * (step + 1) / self.warmup
        span = max(1, self.total - 1 - self.warmup)
        progress = min(1.0, (step - self.warmup) / span)
        return self.final + 0.5 * (self.peak - self.final) * (1 + math.cos(math.pi * progress))


class AdamW:
    def __init__(self, params: dict[str, Parameter], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.b1, self.b2 = betas
        self.eps, self.weight_decay = eps, weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data *= 1 - lr * self.weight_decay
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"opt.m.{k}": v for k, v in self.m.items()}
        out.update({f"opt.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k] = np.asarray(state[f"opt.m.{k}"], dtype=self.m[k].dtype).copy()
            self.v[k] = np.asarray(state[f"opt.v.{k}"], dtype=self.v[k].dtype).copy()


@dataclass
class StageConfig:
    steps: int
    lr: float
    weight_decay: float
    batch_size: int = 4


class Trainer:
    """Sequential optimizer loop; step ``k`` draws all randomness from ``default_rng([seed, k])``.

    Because of that, a checkpoint only needs parameters, Adam moments and the step counter
    for a resumed run to reproduce the uninterrupted loss trajectory exactly.
    """

    def __init__(self, model: Module, loss_fn: Callable[[np.random.Generator], Tensor], cfg: StageConfig,
                 seed: int, prefix: str = ""):
        self.model, self.loss_fn, self.cfg, self.seed = model, loss_fn, cfg, seed
        self.params = dict(model.named_parameters(prefix))
        self.opt = AdamW(self.params, weight_decay=cfg.weight_decay)
        self.schedule = WarmupCosine(cfg.lr, cfg.steps)
        self.step_count = 0
        self.history: list[tuple[int, float]] = []

    def step(self) -> float:
        rng = np.random.default_rng([self.seed, self.step_count])
        for p in self.params.values():
            p.grad = None
        loss = self.loss_fn(rng)
        loss.backward()
        self.opt.step(self.schedule(self.step_count))
        value = float(loss.data)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {self.step_count}")
        self.history.append((self.step_count, value))
        self.step_count += 1
        return value

    def run(self, steps: int | None = None, stop: Callable[[int, float], bool] | None = None) -> list[float]:
        """Run ``steps`` more steps (default: up to the configured total); ``stop`` may end early."""
        end = self.cfg.steps if steps is None else self.step_count + steps
        out = []
        while self.step_count < end:
            out.append(self.step())
            if stop is not None and stop(self.step_count, out[-1]):
                break
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.params.items()}
        out.update(self.opt.state_dict())
        out["train.step"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data = np.asarray(state[k], dtype=p.data.dtype).copy()
        self.opt.load_state_dict(state)
        self.step_count = self.opt.t = int(state["train.step"][0])

    def save(self, path: str | os.PathLike, extra: dict[str, np.ndarray] | None = None) -> None:
        state = self.state_dict()
        state.update(extra or {})
        checkpoint.save(path, state)

    def write_curve(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss"])
            w.writerows((s, f"{v:.8g}") for s, v in self.history)


def _batch(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return np.sort(rng.choice(n, size=min(size, n), replace=False))


def vae_trainer(vae: Module, labels: np.ndarray, cfg: StageConfig, seed: int, kl_weight: float = 1e-6,
                beta: float = 1.0) -> Trainer:
    """CE + beta * Lovasz on the reconstruction plus ``kl_weight`` * KL, with sampled latents."""
    if len(labels) == 0:
        raise ValueError("empty dataset")

    def loss_fn(rng):
        lab = labels[_batch(rng, len(labels), cfg.batch_size)]
        rep = vae.encode(lab, rng)
        return combined_seg_loss(vae.decode(rep.z), lab, beta) + kl_weight * kl_divergence(rep.mean, rep.log_var)

    return Trainer(vae, loss_fn, cfg, seed, prefix="vae")


class DiffusionModules(Module):
    """The jointly trained diffusion stage: feature extractor, condition network and eps_theta."""

    def __init__(self, fe, cond_net, eps_model):
        self.fe, self.cond_net, self.eps_model = fe, cond_net, eps_model


def encode_latents(vae: Module, labels: np.ndarray, batch: int = 16) -> np.ndarray:
    """Deterministic-mode latents for every scene (frozen VAE)."""
    with T.no_grad():
        return np.concatenate([vae.encode(labels[i:i + batch]).mean.data for i in range(0, len(labels), batch)])


def latent_scale(latents: np.ndarray) -> float:
    """Scalar that brings the latent set to unit standard deviation."""
    return float(1.0 / max(latents.std(), 1e-6))


def diffusion_trainer(pipe, images: np.ndarray, latents: np.ndarray, cam, cfg: StageConfig, seed: int) -> Trainer:
    """Trains FE + CN + eps_theta on scaled deterministic latents; the VAE is not part of the graph."""
    if len(latents) == 0:
        raise ValueError("empty dataset")
    group = DiffusionModules(pipe.fe, pipe.cond_net, pipe.eps_model)
    scaled = (latents * pipe.latent_scale).astype(np.float32)

    def loss_fn(rng):
        idx = _batch(rng, len(scaled), cfg.batch_size)
        cond = pipe.cond_net(pipe.fe(Tensor(images[idx]), cam))
        return denoise_loss(pipe.eps_model, pipe.schedule, Tensor(scaled[idx]), cond, rng)

    return Trainer(group, loss_fn, cfg, seed)


def segmenter_inputs(pipe, latents: np.ndarray, rng: np.random.Generator | None = None,
                     noise: float = 0.0) -> Tensor:
    """Decoded class probabilities of (optionally noised) latents, as the segmenter sees them."""
    z = latents * pipe.latent_scale
    if rng is not None and noise > 0:
        sigma = rng.uniform(0.0, noise, size=(len(z),) + (1,) * (z.ndim - 1))
        z = z + sigma * rng.standard_normal(z.shape)
    with T.no_grad():
        return pipe.decode_probs(Tensor(z.astype(np.float32)))


def segmenter_trainer(pipe, latents: np.ndarray, labels: np.ndarray, cfg: StageConfig, seed: int,
                      noise: float = 0.5, beta: float = 1.0) -> Trainer:
    """Decoded VAE completions (with latent-noise augmentation) -> true labels, CE + Lovasz."""
    if len(labels) == 0:
        raise ValueError("empty dataset")

    def loss_fn(rng):
        idx = _batch(rng, len(labels), cfg.batch_size)
        x = segmenter_inputs(pipe, latents[idx], rng, noise)
        return combined_seg_loss(pipe.segmenter(x), labels[idx], beta)

    return Trainer(pipe.segmenter, loss_fn, cfg, seed, prefix="segmenter")
