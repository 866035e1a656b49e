"""Voxel VAE, condition network, and the VOXL grid file format."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import DownsampleBlock, UpsampleBlock
from .nn import Conv3d, Module
from .tensor import Tensor

DOWNSAMPLE_FACTOR = 4
VOXL_MAGIC = b"VOXL"
VOXL_VERSION = 1


@dataclass
class VoxelGrid:
    labels: np.ndarray          # (L, W, H) uint8, 0 = empty
    num_classes: int
    voxel_size: float = 0.2

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 3:
            raise ValueError(f"voxel grid must be rank-3, got shape {self.labels.shape}")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ValueError(f"label {int(self.labels.max())} out of range for {self.num_classes} classes")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    def to_bytes(self) -> bytes:
        L, W, H = self.shape
        head = VOXL_MAGIC + struct.pack("<IIIIIf", VOXL_VERSION, self.num_classes, L, W, H, self.voxel_size)
        return head + np.ascontiguousarray(self.labels).tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "VoxelGrid":
        if blob[:4] != VOXL_MAGIC:
            raise ValueError("not a VOXL file (bad magic)")
        version, C, L, W, H, vs = struct.unpack_from("<IIIIIf", blob, 4)
        if version != VOXL_VERSION:
            raise ValueError(f"unsupported VOXL version {version}")
        body = blob[28:]
        if len(body) != L * W * H:
            raise ValueError(f"VOXL payload has {len(body)} bytes, expected {L * W * H}")
        return cls(np.frombuffer(body, dtype=np.uint8).reshape(L, W, H).copy(), C, float(vs))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VoxelGrid":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class LatentRep:
    mean: Tensor
    log_var: Tensor
    z: Tensor


def check_grid_extents(shape, factor: int = DOWNSAMPLE_FACTOR) -> None:
    if any(n % factor for n in shape):
        raise ValueError(f"grid extents {tuple(shape)} must be divisible by {factor}")


def latent_shape(grid_shape, factor: int = DOWNSAMPLE_FACTOR) -> tuple[int, int, int]:
    check_grid_extents(grid_shape, factor)
    return tuple(n // factor for n in grid_shape)


class VoxelVAE(Module):
    """One-hot labels -> two down-sampling blocks -> (mean, log_var); two up-sampling blocks -> class logits."""

    def __init__(self, num_classes: int, rng: np.random.Generator, channels=(8, 16), latent_channels: int = 8):
        c0, c1 = channels
        self.num_classes = num_classes
        self.latent_channels = latent_channels
        self.enc_down = [DownsampleBlock(num_classes, c0, rng), DownsampleBlock(c0, c1, rng)]
        self.mean_head = Conv3d(c1, latent_channels, 1, rng)
        self.logvar_head = Conv3d(c1, latent_channels, 1, rng)
        self.dec_in = Conv3d(latent_channels, c1, 1, rng)
        self.dec_up = [UpsampleBlock(c1, c0, rng), UpsampleBlock(c0, c0, rng)]
        self.classifier = Conv3d(c0, num_classes, 1, rng)

    def embed(self, labels: np.ndarray) -> Tensor:
        labels = np.asarray(labels)
        if labels.ndim == 3:
            labels = labels[None]
        check_grid_extents(labels.shape[1:])
        return T.one_hot(labels.astype(np.int64), self.num_classes, axis=1)

    def encode(self, labels: np.ndarray, rng: np.random.Generator | None = None) -> LatentRep:
        """``rng=None`` selects the deterministic mode (z = mean)."""
        h = self.embed(labels)
        for block in self.enc_down:
            h = block(h)
        mean, log_var = self.mean_head(h), self.logvar_head(h)
        if rng is None:
            return LatentRep(mean, log_var, mean)
        eta = Tensor(rng.standard_normal(mean.shape), dtype=mean.dtype)
        return LatentRep(mean, log_var, mean + T.exp(log_var * 0.5) * eta)

    def decode(self, z: Tensor) -> Tensor:
        if z.ndim == 4:
            z = T.reshape(z, (1,) + z.shape)
        if z.shape[1] != self.latent_channels:
            raise ValueError(f"latent has {z.shape[1]} channels, decoder expects {self.latent_channels}")
        h = self.dec_in(z)
        for block in self.dec_up:
            h = block(h)
        return self.classifier(h)

    def reconstruct(self, labels: np.ndarray) -> np.ndarray:
        with T.no_grad():
            logits = self.decode(self.encode(labels).z)
        return logits.data.argmax(axis=1).astype(np.uint8)


class ConditionNetwork(Module):
    """Encoder-shaped network mapping full-resolution features into the latent geometry."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, channels=(8, 16)):
        c0, c1 = channels
        self.down = [DownsampleBlock(in_channels, c0, rng), DownsampleBlock(c0, c1, rng)]
        self.head = Conv3d(c1, out_channels, 1, rng)

    def forward(self, features: Tensor) -> Tensor:
        if features.ndim == 4:
            features = T.reshape(features, (1,) + features.shape)
        check_grid_extents(features.shape[2:])
        h = features
        for block in self.down:
            h = block(h)
        return self.head(h)
