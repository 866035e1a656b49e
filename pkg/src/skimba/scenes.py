"""Procedural voxel scenes, pinhole rendering, and on-disk datasets."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .networks import CameraModel
from .vae import VoxelGrid, check_grid_extents

GENERATOR_VERSION = 1
CLASS_NAMES = ("empty", "ground", "building", "vehicle", "pole")
EMPTY, GROUND, BUILDING, VEHICLE, POLE = range(5)
PALETTE = np.array([[0.0, 0.0, 0.0], [0.45, 0.35, 0.25], [0.75, 0.2, 0.2], [0.2, 0.35, 0.8], [0.9, 0.85, 0.2]])
SKY = np.array([0.55, 0.7, 0.9])
FACE_SHADE = np.array([0.75, 0.88, 1.0])      # hit face normal along L, W, H
DEPTH_FALLOFF = 0.04
SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class SceneConfig:
    grid_shape: tuple[int, int, int] = (32, 32, 8)
    voxel_size: float = 0.2
    image_shape: tuple[int, int] = (24, 32)
    fov_deg: float = 90.0
    boxes: tuple[int, int] = (2, 6)
    poles: tuple[int, int] = (0, 4)

    def validate(self) -> None:
        L, W, H = self.grid_shape
        check_grid_extents(self.grid_shape)
        if min(L, W) < 8 or H < 4:
            raise ValueError(f"grid {self.grid_shape} too small for scene layout (need L, W >= 8 and H >= 4)")
        if not (0 <= self.boxes[0] <= self.boxes[1] and 0 <= self.poles[0] <= self.poles[1]):
            raise ValueError("object count ranges must be non-negative and ordered")
        if not 10.0 < self.fov_deg < 170.0 or min(self.image_shape) < 2 or self.voxel_size <= 0:
            raise ValueError("invalid camera geometry")

    def camera(self) -> CameraModel:
        """Fixed camera behind the L = 0 face, looking down the L axis and tilted toward the ground."""
        L, W, H = (n * self.voxel_size for n in self.grid_shape)
        rows, cols = self.image_shape
        f = 0.5 * cols / np.tan(np.radians(self.fov_deg) / 2)
        return CameraModel.look_at(eye=(-0.15 * L, 0.5 * W, 1.25 * H), target=(0.6 * L, 0.5 * W, 0.0),
                                   fx=f, fy=f, cx=(cols - 1) / 2, cy=(rows - 1) / 2, rows=rows, cols=cols)


@dataclass
class SyntheticScene:
    grid: VoxelGrid
    camera: CameraModel
    image: np.ndarray           # (3, rows, cols) float32 in [0, 1]
    seed: int


def scene_seed(root_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([root_seed, SPLITS[split], index, GENERATOR_VERSION])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_labels(seed: int, cfg: SceneConfig) -> np.ndarray:
    cfg.validate()
    rng = np.random.default_rng([seed, GENERATOR_VERSION])
    L, W, H = cfg.grid_shape
    labels = np.zeros(cfg.grid_shape, dtype=np.uint8)
    labels[:, :, 0] = GROUND
    for _ in range(rng.integers(cfg.boxes[0], cfg.boxes[1] + 1)):
        if rng.random() < 0.5:
            cls, size = BUILDING, (rng.integers(3, max(4, L // 3 + 1)), rng.integers(3, max(4, W // 3 + 1)),
                                   rng.integers(3, H))
        else:
            cls, size = VEHICLE, (rng.integers(3, 6), rng.integers(2, 4), 2)
            if rng.random() < 0.5:
                size = (size[1], size[0], size[2])
        i, j = rng.integers(0, L - size[0] + 1), rng.integers(0, W - size[1] + 1)
        labels[i:i + size[0], j:j + size[1], 1:1 + size[2]] = cls
    for _ in range(rng.integers(cfg.poles[0], cfg.poles[1] + 1)):
        i, j, h = rng.integers(0, L), rng.integers(0, W), rng.integers(3, H)
        column = labels[i, j, 1:1 + h]
        column[column == EMPTY] = POLE
    return labels


def shade(cls: np.ndarray, axis: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Per-hit colour: class colour, face shading, depth attenuation. ``cls == 0`` means a miss."""
    rgb = PALETTE[cls] * FACE_SHADE[axis][:, None] * np.exp(-DEPTH_FALLOFF * depth)[:, None]
    return np.where((cls > 0)[:, None], rgb, SKY)


def render(labels: np.ndarray, cam: CameraModel, voxel_size: float, chunk: int = 64) -> np.ndarray:
    """Ray cast every pixel against all occupied voxels with the slab test; returns (3, rows, cols)."""
    dirs, origin = cam.rays()
    occ = np.argwhere(labels > 0)
    if not len(occ):
        return np.broadcast_to(SKY[:, None, None], (3, cam.rows, cam.cols)).astype(np.float32)
    lo = occ * voxel_size
    hi = lo + voxel_size
    cls_of = labels[labels > 0]   # argwhere order matches boolean-mask order
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    out = np.empty((len(dirs), 3))
    for s in range(0, len(dirs), chunk):
        iv = inv[s:s + chunk, None, :]
        with np.errstate(invalid="ignore"):
            t0 = (lo[None] - origin) * iv
            t1 = (hi[None] - origin) * iv
        tmin = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf)
        tmax = np.nan_to_num(np.maximum(t0, t1), nan=np.inf)
        near, far = tmin.max(-1), tmax.min(-1)
        hit = (near <= far) & (far > 0) & (near > 0)
        near = np.where(hit, near, np.inf)
        best = near.argmin(-1)
        rows = np.arange(len(best))
        depth = near[rows, best]
        found = np.isfinite(depth)
        cls = np.where(found, cls_of[best], 0)
        axis = tmin[rows, best].argmax(-1)
        out[s:s + chunk] = shade(cls, axis, np.where(found, depth, 0.0))
    return out.T.reshape(3, cam.rows, cam.cols).astype(np.float32)


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> SyntheticScene:
    cfg = cfg or SceneConfig()
    labels = generate_labels(seed, cfg)
    cam = cfg.camera()
    image = render(labels, cam, cfg.voxel_size)
    return SyntheticScene(VoxelGrid(labels, len(CLASS_NAMES), cfg.voxel_size), cam, image, seed)


@dataclass
class Dataset:
    scenes: list[SyntheticScene]

    def __len__(self) -> int:
        return len(self.scenes)

    def __getitem__(self, i) -> SyntheticScene:
        return self.scenes[i]

    @property
    def labels(self) -> np.ndarray:
        return np.stack([s.grid.labels for s in self.scenes])

    @property
    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.scenes])

    @property
    def camera(self) -> CameraModel:
        return self.scenes[0].camera


def make_split(root_seed: int, split: str, count: int, cfg: SceneConfig) -> Dataset:
    return Dataset([generate_scene(scene_seed(root_seed, split, i), cfg) for i in range(count)])


def save_split(ds: Dataset, directory: str | os.PathLike, split: str) -> None:
    """One VOXL file per scene, all images in one SKBA container, and a seed manifest."""
    d = Path(directory) / split
    d.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(ds.scenes):
        scene.grid.save(d / f"scene_{i:04d}.voxl")
    checkpoint.save(d / "images.skba", {f"image/{i:04d}": s.image for i, s in enumerate(ds.scenes)})
    with open(d / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "seed"])
        w.writerows([i, s.seed] for i, s in enumerate(ds.scenes))


def load_split(directory: str | os.PathLike, split: str, cfg: SceneConfig) -> Dataset:
    d = Path(directory) / split
    if not (d / "manifest.csv").exists():
        raise FileNotFoundError(f"no {split} split under {directory}; run gen-data first")
    with open(d / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    images = checkpoint.load(d / "images.skba")
    cam = cfg.camera()
    scenes = []
    for row in rows:
        i = int(row["index"])
        grid = VoxelGrid.load(d / f"scene_{i:04d}.voxl")
        if grid.shape != tuple(cfg.grid_shape):
            raise ValueError(f"{split} scene {i} has shape {grid.shape}, config expects {tuple(cfg.grid_shape)}")
        scenes.append(SyntheticScene(grid, cam, images[f"image/{i:04d}"], int(row["seed"])))
    return Dataset(scenes)
