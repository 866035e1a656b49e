"""``skimba`` command line: data generation, staged training, evaluation, sampling, benchmarks, ablations."""
from __future__ import annotations

import argparse
import logging
import os
import sys


def _apply_thread_cap() -> None:
    """SKIMBA_THREADS caps BLAS worker threads; must run before numpy is imported."""
    raw = os.environ.get("SKIMBA_THREADS")
    if raw is None:
        return
    if not raw.isdigit() or int(raw) < 1:
        raise SystemExit(f"skimba: error: SKIMBA_THREADS must be a positive integer, got {raw!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skimba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="root seed (data and model)")
        p.add_argument("--out", default="work", help="work directory (default: ./work)")
        return p

    add("gen-data", "generate the synthetic train/val/test scenes")
    for stage in ("train-vae", "train-diffusion", "train-seg"):
        add(stage, f"run the {stage[6:]} training stage").add_argument(
            "--resume", action="store_true", help="continue from the stage checkpoint if present")
    p = add("eval", "run the full pipeline on a split and report IoU / mIoU")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p = add("sample", "sample one latent for a scene and decode it")
    p.add_argument("--steps", type=int, help="denoising steps; must match the trained schedule (default 100)")
    p.add_argument("--scene", type=int, default=0, help="scene index in the split")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p = add("bench", "per-stage inference timings; --blocks and --scan for micro-benchmarks")
    p.add_argument("--blocks", action="store_true", help="print MSCB multiply-count pairs")
    p.add_argument("--scan", action="store_true", help="scan tokens/s table and CSV")
    p.add_argument("--scenes", type=int, default=2)
    p = add("ablate", "train and evaluate the four ablation settings")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated model seeds")
    return parser


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ValueError(f"--seeds expects comma-separated integers, got {text!r}") from None


def run(args) -> int:
    import numpy as np

    from . import checkpoint
    from . import harness as H
    from .config import load_config
    from .tensor import Tensor

    cfg = load_config(args.config, seed=args.seed, model_seed=args.seed)
    if args.command == "sample" and args.steps is not None and args.steps != cfg.denoise_steps:
        raise ValueError(f"--steps {args.steps} differs from the trained schedule ({cfg.denoise_steps} steps); "
                         "step-skipping samplers are not supported")
    work = H.WorkDir(args.out)
    work.root.mkdir(parents=True, exist_ok=True)
    out = sys.stdout

    if args.command == "gen-data":
        splits = H.generate_data(cfg, work)
        work.path("config.txt").write_text(cfg.dumps())
        print(" ".join(f"{k}={len(v)}" for k, v in splits.items()), "scenes written to", work.data, file=out)
    elif args.command == "train-vae":
        H.train_vae_stage(cfg, work, resume=args.resume)
        print("wrote", work.ckpt("vae"), file=out)
    elif args.command == "train-diffusion":
        H.train_diffusion_stage(cfg, work, resume=args.resume)
        print("wrote", work.ckpt("diffusion"), file=out)
    elif args.command == "train-seg":
        H.train_seg_stage(cfg, work, resume=args.resume)
        print("wrote", work.ckpt("segmenter"), file=out)
    elif args.command == "eval":
        pipe = H.load_pipeline(cfg, work)
        report = H.evaluate(pipe, H.load_data(cfg, work, args.split), H.stage_seed(cfg.model_seed, 4))
        H.write_report(report, work, args.split)
        print(report.metrics_table(), file=out)
        print(H.stage_table(report.mean_timings()), file=out)
    elif args.command == "sample":
        ds = H.load_data(cfg, work, args.split)
        if not 0 <= args.scene < len(ds):
            raise ValueError(f"--scene {args.scene} out of range for {len(ds)} {args.split} scenes")
        pipe = H.load_pipeline(cfg, work)
        scene = ds[args.scene]
        pred = pipe.predict(Tensor(scene.image[None]), scene.camera, np.random.default_rng(cfg.model_seed))[0]
        stem = f"{args.split}_{args.scene:04d}"
        checkpoint.save(work.path("samples", f"{stem}_latent.skba"), {"latent": pipe.last_latent[0]})
        pred.grid.save(work.path("samples", f"{stem}.voxl"))
        print("wrote", work.root / "samples" / f"{stem}.voxl", file=out)
    elif args.command == "bench":
        if args.blocks:
            print(H.blocks_table(cfg.denoiser_channels), file=out)
        if args.scan:
            rows = H.bench_scan()
            print(H.scan_table(rows), file=out)
            work.path("bench", "scan.csv").write_text(H.scan_csv(rows))
        if not (args.blocks or args.scan):
            try:
                pipe, ds = H.load_pipeline(cfg, work), H.load_data(cfg, work, "test")
            except FileNotFoundError:
                logging.getLogger("skimba").info("no trained checkpoints; timing a freshly initialised pipeline")
                pipe = H.build_pipeline(cfg)
                from .scenes import make_split
                ds = make_split(cfg.seed, "test", max(1, args.scenes), cfg.scene_config())
            print(H.stage_table(H.bench_stages(pipe, ds, args.scenes, cfg.model_seed)), file=out)
    elif args.command == "ablate":
        rows = H.run_ablation(cfg, work, _seeds(args.seeds))
        print(H.ablation_table(rows), file=out)
        work.path("eval", "ablation.csv").write_text(H.ablation_csv(rows))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_cap()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    from .checkpoint import CheckpointError
    from .config import ConfigError
    try:
        return run(args)
    except (ConfigError, CheckpointError, ValueError, FileNotFoundError, KeyError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"skimba: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
