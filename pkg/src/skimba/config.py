"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields

from .diffusion import DEFAULT_STEPS, NoiseSchedule
from .networks import NetworkSpec
from .scenes import CLASS_NAMES, SceneConfig
from .train import StageConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # geometry
    grid: tuple[int, ...] = (32, 32, 8)
    voxel_size: float = 0.2
    image: tuple[int, ...] = (24, 32)
    num_classes: int = 5
    # dataset
    seed: int = 0
    model_seed: int = 0
    train_scenes: int = 256
    val_scenes: int = 32
    test_scenes: int = 32
    # networks
    latent_channels: int = 8
    cond_channels: int = 8
    feature_channels: int = 8
    fe_depth: int = 1
    vae_channels: tuple[int, ...] = (16, 32)
    cond_net_channels: tuple[int, ...] = (16, 32)
    denoiser_channels: tuple[int, ...] = (16, 32)
    segmenter_channels: tuple[int, ...] = (16, 32)
    state_size: int = 8
    use_mscb: bool = True
    use_sb: bool = True
    use_skimba: bool = True
    # optimisation; a positive *_steps overrides *_epochs
    batch_size: int = 4
    vae_epochs: int = 24
    vae_steps: int = 0
    vae_lr: float = 3e-4
    vae_weight_decay: float = 0.01
    kl_weight: float = 1e-6
    lovasz_beta: float = 1.0
    diffusion_epochs: int = 43
    diffusion_steps: int = 0
    diffusion_lr: float = 1e-3
    diffusion_weight_decay: float = 1e-4
    seg_epochs: int = 24
    seg_steps: int = 0
    seg_lr: float = 5e-3
    seg_weight_decay: float = 1e-4
    seg_latent_noise: float = 0.5
    denoise_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.grid) != 3 or len(self.image) != 2:
            raise ConfigError("grid needs three extents and image two")
        if self.num_classes < len(CLASS_NAMES):
            raise ConfigError(f"num_classes must be at least {len(CLASS_NAMES)} for the synthetic generator")
        for name in ("train_scenes", "batch_size", "latent_channels", "cond_channels", "feature_channels",
                     "state_size", "denoise_steps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if min(self.val_scenes, self.test_scenes, self.fe_depth) < 0:
            raise ConfigError("scene counts and fe_depth must be non-negative")
        if len(self.vae_channels) != 2 or len(self.cond_net_channels) != 2:
            raise ConfigError("vae_channels and cond_net_channels take exactly two entries")
        try:
            NoiseSchedule.linear(self.denoise_steps)
        except ValueError:
            raise ConfigError(f"denoise_steps={self.denoise_steps} is too short for the rescaled linear schedule "
                              "(needs more than 20)") from None
        try:
            self.scene_config().validate()
            NetworkSpec(**self._spec_kwargs()).latent_grid
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def scene_config(self) -> SceneConfig:
        return SceneConfig(grid_shape=tuple(self.grid), voxel_size=self.voxel_size, image_shape=tuple(self.image))

    def _spec_kwargs(self) -> dict:
        return dict(grid_shape=tuple(self.grid), num_classes=self.num_classes, voxel_size=self.voxel_size,
                    image_shape=tuple(self.image), latent_channels=self.latent_channels,
                    cond_channels=self.cond_channels, feature_channels=self.feature_channels,
                    fe_depth=self.fe_depth, vae_channels=tuple(self.vae_channels),
                    cond_net_channels=tuple(self.cond_net_channels),
                    denoiser_channels=tuple(self.denoiser_channels),
                    segmenter_channels=tuple(self.segmenter_channels), state_size=self.state_size,
                    use_mscb=self.use_mscb, use_sb=self.use_sb, use_skimba=self.use_skimba)

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(**self._spec_kwargs())

    def _steps(self, steps: int, epochs: int) -> int:
        return steps if steps > 0 else max(1, epochs * -(-self.train_scenes // self.batch_size))

    def vae_stage(self) -> StageConfig:
        return StageConfig(self._steps(self.vae_steps, self.vae_epochs), self.vae_lr, self.vae_weight_decay,
                           self.batch_size)

    def diffusion_stage(self) -> StageConfig:
        return StageConfig(self._steps(self.diffusion_steps, self.diffusion_epochs), self.diffusion_lr,
                           self.diffusion_weight_decay, self.batch_size)

    def seg_stage(self) -> StageConfig:
        return StageConfig(self._steps(self.seg_steps, self.seg_epochs), self.seg_lr, self.seg_weight_decay,
                           self.batch_size)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind.startswith("tuple"):
            return tuple(int(x) for x in raw.replace("x", ",").split(",") if x.strip())
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r} (expected {kind})") from None
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse flat ``key = value`` lines (``#`` comments allowed). Unknown keys are an error."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message.splitlines()[0]}") from None
    kinds = {f.name: str(f.type) for f in fields(RunConfig)}
    values = {}
    for key, raw in parser["run"].items():
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, kinds[key], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike | None, **overrides) -> RunConfig:
    if path is None:
        return parse_config("", **overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)
