"""Full architectures: image lifting and feature extraction, the Skimba denoiser and segmenter, and the pipeline."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import MSCB, BlockConfig, ConvResBlock, DDRBlock, DownsampleBlock, SemanticBlock, UpsampleBlock
from .diffusion import EpsilonModel, MSCBFuse, NoiseSchedule, sample
from .nn import Conv2d, Conv3d, Module
from .ssm import SkimbaBlock
from .tensor import Tensor
from .vae import ConditionNetwork, VoxelGrid, VoxelVAE, latent_shape

@dataclass
class CameraModel:
    """Pinhole camera; ``rotation``/``translation`` map grid-frame metres to the camera frame.

    Camera axes: x right, y down, z forward. Pixel (row r, col c) has its centre at (u=c, v=r).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rows: int
    cols: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        vals = np.array([self.fx, self.fy, self.cx, self.cy], dtype=float)
        if not np.all(np.isfinite(vals)) or self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"degenerate intrinsics fx={self.fx}, fy={self.fy}, cx={self.cx}, cy={self.cy}")
        if self.rows < 2 or self.cols < 2:
            raise ValueError("image must be at least 2x2 pixels")
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def look_at(cls, eye, target, fx, fy, cx, cy, rows, cols, up=(0.0, 0.0, 1.0)) -> "CameraModel":
        eye, target = np.asarray(eye, float), np.asarray(target, float)
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(fx, fy, cx, cy, rows, cols, R, -R @ eye)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Grid-frame points (N, 3) -> pixel coordinates u, v and camera depth z."""
        pc = np.asarray(points, float) @ self.rotation.T + self.translation
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return u, v, z

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions (rows*cols, 3) in the grid frame, row-major over pixels, and the origin."""
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        d_cam = np.stack([(c.ravel() - self.cx) / self.fx, (r.ravel() - self.cy) / self.fy,
                          np.ones(r.size)], axis=1)
        d = d_cam @ self.rotation
        return d / np.linalg.norm(d, axis=1, keepdims=True), self.center


def voxel_centers(grid_shape, voxel_size: float) -> np.ndarray:
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in grid_shape], indexing="ij"), axis=-1).reshape(-1, 3)
    return (idx + 0.5) * voxel_size


def lifting_table(cam: CameraModel, grid_shape, voxel_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear gather indices/weights (V, 4) into the flattened image for every voxel centre."""
    u, v, z = cam.project(voxel_centers(grid_shape, voxel_size))
    valid = (z > 1e-6) & (u >= 0) & (u <= cam.cols - 1) & (v >= 0) & (v <= cam.rows - 1)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    u0 = np.minimum(np.floor(u), cam.cols - 2).astype(np.int64)
    v0 = np.minimum(np.floor(v), cam.rows - 2).astype(np.int64)
    du, dv = u - u0, v - v0
    idx = np.stack([v0 * cam.cols + u0, v0 * cam.cols + u0 + 1,
                    (v0 + 1) * cam.cols + u0, (v0 + 1) * cam.cols + u0 + 1], axis=1)
    w = np.stack([(1 - dv) * (1 - du), (1 - dv) * du, dv * (1 - du), dv * du], axis=1)
    w[~valid] = 0.0
    return idx, w


def project_2d_to_3d(features: Tensor, cam: CameraModel, grid_shape, voxel_size: float,
                     table: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
    """Back-project an image feature map (B, C, rows, cols) along camera rays into (B, C, L, W, H).

    Voxels behind the camera or outside the image receive zeros.
    """
    if features.ndim == 3:
        features = T.reshape(features, (1,) + features.shape)
    B, C, rows, cols = features.shape
    if (rows, cols) != (cam.rows, cam.cols):
        raise ValueError(f"feature map {rows}x{cols} does not match camera image {cam.rows}x{cam.cols}")
    idx, w = table if table is not None else lifting_table(cam, grid_shape, voxel_size)
    flat = T.reshape(features, (B, C, rows * cols))
    return T.reshape(T.weighted_gather(flat, idx, w), (B, C) + tuple(grid_shape))


@dataclass
class NetworkSpec:
    grid_shape: tuple[int, int, int] = (32, 32, 8)
    num_classes: int = 5
    voxel_size: float = 0.2
    image_shape: tuple[int, int] = (24, 48)
    latent_channels: int = 8
    cond_channels: int = 8
    feature_channels: int = 8
    fe_depth: int = 1
    vae_channels: tuple[int, int] = (8, 16)
    cond_net_channels: tuple[int, int] = (8, 16)
    denoiser_channels: tuple[int, ...] = (16, 32)
    segmenter_channels: tuple[int, ...] = (8, 16, 32)
    state_size: int = 8
    use_mscb: bool = True
    use_sb: bool = True
    use_skimba: bool = True

    @property
    def latent_grid(self) -> tuple[int, int, int]:
        return latent_shape(self.grid_shape)

    def ablated(self, name: str) -> "NetworkSpec":
        return replace(self, **ABLATIONS[name])


ABLATIONS = {
    "w/o MSCB": {"use_mscb": False},
    "w/o SB": {"use_sb": False},
    "w/o Skimba": {"use_skimba": False},
    "Full Model": {},
}


def _check_levels(shape, levels: int, what: str) -> None:
    f = 2 ** (levels - 1)
    if any(n % f for n in shape):
        raise ValueError(f"{what}: extents {tuple(shape)} cannot be halved {levels - 1} times cleanly")


class FeatureExtractor(Module):
    """2-D conv stem, back-projection to the voxel grid, then multi-path (MSCB) + DDR stages."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        F = spec.feature_channels
        self.grid_shape, self.voxel_size = spec.grid_shape, spec.voxel_size
        self.conv2d_1 = Conv2d(3, F, 3, rng)
        self.conv2d_2 = Conv2d(F, F, 3, rng)
        self.multipath = [MSCB(F, F, rng, effective_kernel=5) for _ in range(spec.fe_depth)]
        self.ddr = [DDRBlock(BlockConfig(F, F, 3, [1]), rng) for _ in range(spec.fe_depth)]
        self._tables: dict[int, tuple[CameraModel, tuple]] = {}

    def _table(self, cam: CameraModel):
        hit = self._tables.get(id(cam))
        if hit is None or hit[0] is not cam:
            hit = (cam, lifting_table(cam, self.grid_shape, self.voxel_size))
            self._tables = {id(cam): hit}
        return hit[1]

    def forward(self, image: Tensor, cam: CameraModel) -> Tensor:
        if image.ndim == 3:
            image = T.reshape(image, (1,) + image.shape)
        h = T.leaky_relu(self.conv2d_1(image), 0.01)
        h = T.leaky_relu(self.conv2d_2(h), 0.01)
        x = project_2d_to_3d(h, cam, self.grid_shape, self.voxel_size, self._table(cam))
        for mp, ddr in zip(self.multipath, self.ddr):
            x = ddr(x + T.leaky_relu(mp(x), 0.01))
        return x


class Stage(Module):
    """Optional down/up-sampling, then optional Semantic Block and optional Skimba block."""

    def __init__(self, channels: int, rng: np.random.Generator, state_size: int, *, down_from: int | None = None,
                 up_from: int | None = None, use_sb: bool = True, use_skimba: bool = True):
        if down_from is not None:
            self.down = DownsampleBlock(down_from, channels, rng)
        if up_from is not None:
            self.up = UpsampleBlock(up_from, channels, rng)
        if use_sb:
            self.sb = SemanticBlock(channels, rng)
        if use_skimba:
            self.skimba = SkimbaBlock(channels, rng, state_size=state_size)

    def resample(self, x: Tensor) -> Tensor:
        if hasattr(self, "down"):
            return self.down(x)
        if hasattr(self, "up"):
            return self.up(x)
        return x

    def body(self, x: Tensor) -> Tensor:
        if hasattr(self, "sb"):
            x = self.sb(x)
        if hasattr(self, "skimba"):
            x = self.skimba(x)
        return x


class SkimbaDenoiser(Module):
    """U-shaped network: [down -> SB -> Skimba] per level, ConvResblocks carrying encoder residue to the decoder."""

    def __init__(self, in_channels: int, out_channels: int, channels, rng: np.random.Generator,
                 state_size: int = 8, use_sb: bool = True, use_skimba: bool = True):
        ch = list(channels)
        self.levels = len(ch)
        self.stem = Conv3d(in_channels, ch[0], 3, rng)
        self.enc = [Stage(c, rng, state_size, down_from=ch[i - 1] if i else None, use_sb=use_sb,
                          use_skimba=use_skimba) for i, c in enumerate(ch)]
        self.residue = [ConvResBlock(c, c, rng) for c in ch[:-1]]
        self.dec = [Stage(ch[i], rng, state_size, up_from=ch[i + 1], use_sb=use_sb, use_skimba=use_skimba)
                    for i in reversed(range(len(ch) - 1))]
        self.head = Conv3d(ch[0], out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        _check_levels(x.shape[2:], self.levels, "denoiser")
        h = self.stem(x)
        residues = []
        for i, stage in enumerate(self.enc):
            h = stage.body(stage.resample(h))
            if i < self.levels - 1:
                residues.append(self.residue[i](h))
        for stage, res in zip(self.dec, reversed(residues)):
            h = stage.body(stage.resample(h) + res)
        return self.head(h)


class SkimbaSegmenter(Module):
    """Encoder-decoder with one Skimba block at the bottleneck and concatenated skip connections."""

    def __init__(self, num_classes: int, channels, rng: np.random.Generator, state_size: int = 8,
                 use_sb: bool = True, use_skimba: bool = True, in_channels: int | None = None):
        ch = list(channels)
        self.levels = len(ch)
        self.stem = Conv3d(in_channels or num_classes, ch[0], 3, rng)
        self.enc = [Stage(c, rng, state_size, down_from=ch[i - 1] if i else None, use_sb=use_sb,
                          use_skimba=False) for i, c in enumerate(ch)]
        if use_skimba:
            self.skimba = SkimbaBlock(ch[-1], rng, state_size=state_size)
        self.dec = [Stage(ch[i], rng, state_size, up_from=ch[i + 1], use_sb=use_sb, use_skimba=False)
                    for i in reversed(range(len(ch) - 1))]
        self.merge = [Conv3d(2 * ch[i], ch[i], 1, rng) for i in reversed(range(len(ch) - 1))]
        self.head = Conv3d(ch[0], num_classes, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 4:
            x = T.reshape(x, (1,) + x.shape)
        _check_levels(x.shape[2:], self.levels, "segmenter")
        h = self.stem(x)
        skips = []
        for i, stage in enumerate(self.enc):
            h = stage.body(stage.resample(h))
            if i < self.levels - 1:
                skips.append(h)
        if hasattr(self, "skimba"):
            h = self.skimba(h)
        for stage, merge, skip in zip(self.dec, self.merge, reversed(skips)):
            h = stage.body(merge(T.concat([stage.resample(h), skip], axis=1)))
        return self.head(h)


def build_denoiser(spec: NetworkSpec, rng: np.random.Generator) -> EpsilonModel:
    """eps_theta: MSCB fusion of (noisy latent, condition, timestep) followed by the Skimba denoiser."""
    ch = spec.denoiser_channels
    _check_levels(spec.latent_grid, len(ch), "denoiser")
    fuse = MSCBFuse(spec.latent_channels, spec.cond_channels, ch[0], rng, use_mscb=spec.use_mscb)
    net = SkimbaDenoiser(ch[0], spec.latent_channels, ch, rng, spec.state_size, spec.use_sb, spec.use_skimba)
    return EpsilonModel(fuse, net)


def build_segmenter(spec: NetworkSpec, rng: np.random.Generator) -> SkimbaSegmenter:
    _check_levels(spec.grid_shape, len(spec.segmenter_channels), "segmenter")
    return SkimbaSegmenter(spec.num_classes, spec.segmenter_channels, rng, spec.state_size,
                           spec.use_sb, spec.use_skimba)


@dataclass
class Prediction:
    grid: VoxelGrid
    timings: dict[str, float] = field(default_factory=dict)
    completion: np.ndarray | None = None     # argmax of the VAE decoding, before segmentation


class SkimbaPipeline(Module):
    """Image -> features -> condition -> latent diffusion -> VAE decode -> segmentation."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator, schedule: NoiseSchedule | None = None):
        self.spec = spec
        self.schedule = schedule or NoiseSchedule.linear()
        self.vae = VoxelVAE(spec.num_classes, rng, spec.vae_channels, spec.latent_channels)
        self.fe = FeatureExtractor(spec, rng)
        self.cond_net = ConditionNetwork(spec.feature_channels, spec.cond_channels, rng, spec.cond_net_channels)
        self.eps_model = build_denoiser(spec, rng)
        self.segmenter = build_segmenter(spec, rng)
        self.latent_scale = 1.0

    def condition(self, image: Tensor, cam: CameraModel) -> Tensor:
        return self.cond_net(self.fe(image, cam))

    def decode_probs(self, z_scaled: Tensor) -> Tensor:
        """Class probabilities of the VAE decoding of a diffusion-space (scaled) latent."""
        return T.softmax(self.vae.decode(z_scaled * (1.0 / self.latent_scale)), axis=1)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = super().state_dict()
        out["latent_scale"] = np.array([self.latent_scale], dtype=np.float32)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        state = dict(state)
        if "latent_scale" in state:
            self.latent_scale = float(np.asarray(state.pop("latent_scale")).ravel()[0])
        elif strict:
            raise KeyError("state mismatch: missing=['latent_scale']")
        super().load_state_dict(state, strict)

    def forward(self, image: Tensor, cam: CameraModel, rng: np.random.Generator) -> list[Prediction]:
        return self.predict(image, cam, rng)

    def predict(self, image, cam: CameraModel, rng: np.random.Generator) -> list[Prediction]:
        """Run every stage without recording gradients; timings are wall-clock seconds per stage."""
        image = image if isinstance(image, Tensor) else Tensor(image)
        if image.ndim == 3:
            image = T.reshape(image, (1,) + image.shape)
        times = {}
        start = time.perf_counter()
        with T.no_grad():
            t0 = time.perf_counter()
            feats = self.fe(image, cam)
            times["FE"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            cond = self.cond_net(feats)
            times["CN"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            shape = (image.shape[0], self.spec.latent_channels) + self.spec.latent_grid
            z = sample(self.eps_model, self.schedule, cond, shape, rng)
            self.last_latent = z.data
            times["SD"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            probs = self.decode_probs(z)
            completion = probs.data.argmax(axis=1).astype(np.uint8)
            times["VAE"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            labels = self.segmenter(probs).data.argmax(axis=1).astype(np.uint8)
            times["SS"] = time.perf_counter() - t0
        times["FM"] = time.perf_counter() - start
        B = image.shape[0]
        per = {k: v / B for k, v in times.items()}
        return [Prediction(VoxelGrid(labels[b], self.spec.num_classes, self.spec.voxel_size), dict(per),
                           completion[b]) for b in range(B)]
