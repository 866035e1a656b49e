"""Work-directory orchestration: datasets, staged training, evaluation, ablations and benchmarks."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .blocks import cost_report
from .config import RunConfig
from .diffusion import NoiseSchedule
from .losses import ConfusionCounts, completion_counts, iou_from_counts
from .networks import ABLATIONS, SkimbaPipeline
from .scenes import CLASS_NAMES, Dataset, load_split, make_split, save_split
from .ssm import ScanParams, dilated_scan
from .tensor import Tensor
from .train import Trainer, diffusion_trainer, encode_latents, latent_scale, segmenter_trainer, vae_trainer
from .vae import VoxelGrid

log = logging.getLogger("skimba")

TIMING_COLUMNS = ("FE", "CN", "VAE", "SD", "SS", "FM")


def stage_seed(model_seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([model_seed, stage]).generate_state(1)[0])


class WorkDir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    @property
    def data(self) -> Path:
        return self.root / "data"

    def ckpt(self, stage: str) -> Path:
        return self.path("checkpoints", f"{stage}.skba")


def generate_data(cfg: RunConfig, work: WorkDir) -> dict[str, Dataset]:
    scene_cfg = cfg.scene_config()
    out = {}
    for split, n in (("train", cfg.train_scenes), ("val", cfg.val_scenes), ("test", cfg.test_scenes)):
        out[split] = make_split(cfg.seed, split, n, scene_cfg)
        save_split(out[split], work.data, split)
    return out


def load_data(cfg: RunConfig, work: WorkDir, split: str) -> Dataset:
    return load_split(work.data, split, cfg.scene_config())


def build_pipeline(cfg: RunConfig) -> SkimbaPipeline:
    return SkimbaPipeline(cfg.network_spec(), np.random.default_rng(stage_seed(cfg.model_seed, 0)),
                          NoiseSchedule.linear(cfg.denoise_steps))


def _load_into(pipe: SkimbaPipeline, path: Path) -> None:
    state = checkpoint.load(path)
    own = pipe.state_dict()
    model = {k: v for k, v in state.items() if k in own}
    pipe.load_state_dict(model, strict=False)
    if "latent_scale" in state:
        pipe.latent_scale = float(state["latent_scale"][0])


def load_pipeline(cfg: RunConfig, work: WorkDir, stages=("vae", "diffusion", "segmenter")) -> SkimbaPipeline:
    pipe = build_pipeline(cfg)
    for stage in stages:
        path = work.ckpt(stage)
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint {path}; run the {stage} training stage first")
        _load_into(pipe, path)
    return pipe


def _resume(trainer: Trainer, work: WorkDir, stage: str) -> None:
    path = work.ckpt(stage)
    if not path.exists():
        return
    trainer.load_state_dict(checkpoint.load(path))
    curve = work.root / "curves" / f"{stage}_loss.csv"
    if curve.exists():
        with open(curve, newline="") as fh:
            trainer.history = [(int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)
                               if int(r["step"]) < trainer.step_count]
    log.info("resumed %s at step %d", path.name, trainer.step_count)


def _run(trainer: Trainer, work: WorkDir, stage: str, resume: bool, until: int | None, extra=None) -> None:
    """Train to the configured total (or to step ``until``), then write checkpoint and loss curve."""
    if resume:
        _resume(trainer, work, stage)
    trainer.run(None if until is None else max(0, min(until, trainer.cfg.steps) - trainer.step_count))
    trainer.save(work.ckpt(stage), extra)
    trainer.write_curve(work.path("curves", f"{stage}_loss.csv"))


def train_vae_stage(cfg: RunConfig, work: WorkDir, pipe: SkimbaPipeline | None = None,
                    resume: bool = False, ds: Dataset | None = None, until: int | None = None) -> SkimbaPipeline:
    pipe = pipe or build_pipeline(cfg)
    ds = ds or load_data(cfg, work, "train")
    trainer = vae_trainer(pipe.vae, ds.labels, cfg.vae_stage(), stage_seed(cfg.model_seed, 1),
                          cfg.kl_weight, cfg.lovasz_beta)
    _run(trainer, work, "vae", resume, until)
    return pipe


def train_diffusion_stage(cfg: RunConfig, work: WorkDir, pipe: SkimbaPipeline | None = None,
                          resume: bool = False, ds: Dataset | None = None, until: int | None = None) -> SkimbaPipeline:
    pipe = pipe or load_pipeline(cfg, work, ("vae",))
    pipe.vae.freeze()
    ds = ds or load_data(cfg, work, "train")
    latents = encode_latents(pipe.vae, ds.labels)
    pipe.latent_scale = latent_scale(latents)
    trainer = diffusion_trainer(pipe, ds.images, latents, ds.camera, cfg.diffusion_stage(),
                                stage_seed(cfg.model_seed, 2))
    _run(trainer, work, "diffusion", resume, until, {"latent_scale": np.array([pipe.latent_scale], np.float32)})
    return pipe


def train_seg_stage(cfg: RunConfig, work: WorkDir, pipe: SkimbaPipeline | None = None,
                    resume: bool = False, ds: Dataset | None = None, until: int | None = None) -> SkimbaPipeline:
    pipe = pipe or load_pipeline(cfg, work, ("vae", "diffusion"))
    ds = ds or load_data(cfg, work, "train")
    latents = encode_latents(pipe.vae, ds.labels)
    trainer = segmenter_trainer(pipe, latents, ds.labels, cfg.seg_stage(), stage_seed(cfg.model_seed, 3),
                                cfg.seg_latent_noise, cfg.lovasz_beta)
    _run(trainer, work, "segmenter", resume, until)
    return pipe


def train_all(cfg: RunConfig, work: WorkDir, ds: Dataset | None = None) -> SkimbaPipeline:
    ds = ds or load_data(cfg, work, "train")
    pipe = train_vae_stage(cfg, work, ds=ds)
    pipe = train_diffusion_stage(cfg, work, pipe, ds=ds)
    return train_seg_stage(cfg, work, pipe, ds=ds)


# evaluation -------------------------------------------------------------------

@dataclass
class EvalReport:
    num_classes: int
    counts: ConfusionCounts
    completion: tuple[int, int, int] = (0, 0, 0)
    decoded: tuple[int, int, int] = (0, 0, 0)
    timings: list[dict[str, float]] = field(default_factory=list)
    predictions: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def empty(cls, num_classes: int) -> "EvalReport":
        return cls(num_classes, ConfusionCounts.zeros(num_classes))

    def add(self, pred: np.ndarray, truth: np.ndarray, timing: dict | None = None,
            decoded: np.ndarray | None = None) -> None:
        """``decoded`` is the VAE completion before segmentation; defaults to ``pred``."""
        self.counts = self.counts + ConfusionCounts.from_labels(pred, truth, self.num_classes)
        self.completion = tuple(a + b for a, b in zip(self.completion, completion_counts(pred, truth)))
        dec = completion_counts(pred if decoded is None else decoded, truth)
        self.decoded = tuple(a + b for a, b in zip(self.decoded, dec))
        self.predictions.append(np.asarray(pred, dtype=np.uint8))
        if timing is not None:
            self.timings.append(timing)

    @property
    def iou(self) -> float:
        return iou_from_counts(*self.completion)

    @property
    def decoded_iou(self) -> float:
        return iou_from_counts(*self.decoded)

    @property
    def miou(self) -> float:
        return self.counts.miou()

    def class_iou(self) -> np.ndarray:
        return self.counts.iou()

    def mean_timings(self) -> dict[str, float]:
        return {k: float(np.mean([t[k] for t in self.timings])) for k in TIMING_COLUMNS} if self.timings else {}

    def metrics_table(self, names=CLASS_NAMES) -> str:
        ious = self.class_iou()
        lines = [f"{'class':<10} {'IoU':>8}"]
        for c in range(1, self.num_classes):
            name = names[c] if c < len(names) else f"class{c}"
            v = ious[c]
            lines.append(f"{name:<10} {'n/a' if np.isnan(v) else f'{100 * v:.2f}':>8}")
        lines.append(f"{'IoU':<10} {100 * self.iou:>8.2f}")
        lines.append(f"{'mIoU':<10} {100 * self.miou:>8.2f}")
        return "\n".join(lines)

    def metrics_csv(self, names=CLASS_NAMES) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        ious = self.class_iou()
        for c in range(1, self.num_classes):
            name = names[c] if c < len(names) else f"class{c}"
            w.writerow([f"iou_{name}", "" if np.isnan(ious[c]) else f"{ious[c]:.6f}"])
        w.writerow(["completion_iou", f"{self.iou:.6f}"])
        w.writerow(["miou", f"{self.miou:.6f}"])
        return buf.getvalue()


def evaluate(pipe: SkimbaPipeline, ds: Dataset, seed: int, batch: int = 8) -> EvalReport:
    """Full pipeline on every scene; sampling noise comes from one generator seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    report = EvalReport.empty(pipe.spec.num_classes)
    images, labels = ds.images, ds.labels
    for s in range(0, len(ds), batch):
        preds = pipe.predict(Tensor(images[s:s + batch]), ds.camera, rng)
        for p, truth in zip(preds, labels[s:s + batch]):
            report.add(p.grid.labels, truth, p.timings, p.completion)
    return report


def evaluate_predictor(predict, ds: Dataset, num_classes: int) -> EvalReport:
    report = EvalReport.empty(num_classes)
    for scene in ds.scenes:
        report.add(predict(scene), scene.grid.labels)
    return report


def majority_class(labels: np.ndarray, num_classes: int) -> int:
    return int(np.bincount(np.asarray(labels).ravel(), minlength=num_classes).argmax())


def constant_predictor(value: int):
    return lambda scene: np.full(scene.grid.shape, value, dtype=np.uint8)


def random_predictor(num_classes: int, seed: int):
    rng = np.random.default_rng(seed)
    return lambda scene: rng.integers(0, num_classes, size=scene.grid.shape).astype(np.uint8)


def write_report(report: EvalReport, work: WorkDir, name: str = "eval") -> None:
    work.path("eval", f"{name}_metrics.csv").write_text(report.metrics_csv())
    timing = work.path("eval", f"{name}_timings.csv")
    with open(timing, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scene", *TIMING_COLUMNS])
        for i, t in enumerate(report.timings):
            w.writerow([i, *(f"{t[k]:.6f}" for k in TIMING_COLUMNS)])
    for i, pred in enumerate(report.predictions):
        VoxelGrid(pred, report.num_classes).save(work.path("predictions", name, f"scene_{i:04d}.voxl"))


# ablation ---------------------------------------------------------------------

ABLATION_ORDER = ("w/o MSCB", "w/o SB", "w/o Skimba", "Full Model")


@dataclass
class AblationRow:
    """``completion_iou`` scores the VAE decoding; ``seg_iou``/``seg_miou`` the segmenter output."""

    name: str
    completion_iou: float
    seg_iou: float
    seg_miou: float
    per_seed_miou: tuple[float, ...] = ()


def run_ablation(cfg: RunConfig, work: WorkDir, seeds=(0,), names=ABLATION_ORDER) -> list[AblationRow]:
    """Train and evaluate each toggle setting with identical data and seeds; metrics averaged over seeds.

    The VAE is shared across rows of one seed because no toggle touches it.
    """
    train, test = load_data(cfg, work, "train"), load_data(cfg, work, "test")
    results: dict[str, list[tuple[float, float, float]]] = {n: [] for n in names}
    for seed in seeds:
        base = cfg.replace(model_seed=seed)
        seed_dir = WorkDir(work.root / "ablation" / f"seed{seed}")
        if not seed_dir.ckpt("vae").exists():
            train_vae_stage(base, seed_dir, ds=train)
        vae_state = {k: v for k, v in checkpoint.load(seed_dir.ckpt("vae")).items() if k.startswith("vae.")}
        for name in names:
            row_cfg = base.replace(**ABLATIONS[name])
            pipe = build_pipeline(row_cfg)
            pipe.load_state_dict(vae_state, strict=False)
            row_dir = WorkDir(seed_dir.root / name.replace("/", "").replace(" ", "_"))
            train_diffusion_stage(row_cfg, row_dir, pipe, ds=train)
            train_seg_stage(row_cfg, row_dir, pipe, ds=train)
            rep = evaluate(pipe, test, stage_seed(seed, 4))
            results[name].append((rep.decoded_iou, rep.iou, rep.miou))
            log.info("ablation %s seed %d: IoU %.4f mIoU %.4f", name, seed, rep.iou, rep.miou)
    return [AblationRow(n, *np.mean(results[n], axis=0), tuple(r[2] for r in results[n])) for n in names]


def ablation_table(rows: list[AblationRow]) -> str:
    lines = [f"{'Method':<12} {'SSC IoU':>8} {'SS IoU':>8} {'SS mIoU':>8}"]
    lines += [f"{r.name:<12} {100 * r.completion_iou:>8.2f} {100 * r.seg_iou:>8.2f} {100 * r.seg_miou:>8.2f}"
              for r in rows]
    return "\n".join(lines)


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "ssc_iou", "ss_iou", "ss_miou"])
    w.writerows([r.name, f"{r.completion_iou:.6f}", f"{r.seg_iou:.6f}", f"{r.seg_miou:.6f}"] for r in rows)
    return buf.getvalue()


# benchmarks -------------------------------------------------------------------

def bench_stages(pipe: SkimbaPipeline, ds: Dataset, scenes: int = 2, seed: int = 0) -> dict[str, float]:
    """Mean per-scene wall-clock seconds of each pipeline stage at batch size 1."""
    rng = np.random.default_rng(seed)
    rows = []
    for scene in ds.scenes[:scenes]:
        rows.append(pipe.predict(Tensor(scene.image[None]), scene.camera, rng)[0].timings)
    return {k: float(np.mean([r[k] for r in rows])) for k in TIMING_COLUMNS}


def stage_table(timings: dict[str, float]) -> str:
    head = " ".join(f"{k:>9}" for k in TIMING_COLUMNS)
    body = " ".join(f"{timings[k]:>9.4f}" for k in TIMING_COLUMNS)
    return f"{'':<10}{head}\n{'time (s)':<10}{body}"


def blocks_table(channels=(16, 32)) -> str:
    lines = [f"{'kernel':>6} {'C':>4} {'MSCB mults':>12} {'full mults':>12}   per C^2"]
    for k in (5, 7):
        for c in channels:
            stacked, full = cost_report(k, c)
            lines.append(f"{k:>6} {c:>4} {stacked:>12} {full:>12}   {stacked // c ** 2}C^2 vs {full // c ** 2}C^2")
    return "\n".join(lines)


@dataclass
class ScanBenchRow:
    S: int
    N: int
    C: int
    d: int
    seconds: float

    @property
    def tokens_per_s(self) -> float:
        return self.S / self.seconds


def bench_scan(lengths=(256, 1024, 4096), states=(8, 16), channels=(8, 16), dilations=(0, 1, 3),
               repeats: int = 3, seed: int = 0) -> list[ScanBenchRow]:
    rng = np.random.default_rng(seed)
    rows = []
    with T.no_grad():
        for S in lengths:
            for N in states:
                for C in channels:
                    params = ScanParams(C, N, rng)
                    x = Tensor(rng.standard_normal((1, S, C)))
                    for d in dilations:
                        best = np.inf
                        for _ in range(repeats):
                            t0 = time.perf_counter()
                            dilated_scan(params, x, d)
                            best = min(best, time.perf_counter() - t0)
                        rows.append(ScanBenchRow(S, N, C, d, best))
    return rows


def scan_table(rows: list[ScanBenchRow]) -> str:
    lines = [f"{'S':>6} {'N':>4} {'C':>4} {'d':>3} {'tokens/s':>12}"]
    lines += [f"{r.S:>6} {r.N:>4} {r.C:>4} {r.d:>3} {r.tokens_per_s:>12.0f}" for r in rows]
    return "\n".join(lines)


def scan_csv(rows: list[ScanBenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["S", "N", "C", "d", "seconds", "tokens_per_s"])
    w.writerows([r.S, r.N, r.C, r.d, f"{r.seconds:.6g}", f"{r.tokens_per_s:.6g}"] for r in rows)
    return buf.getvalue()
