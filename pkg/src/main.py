# LDSeg - CLI Entry Point
"""
Single command line surface for dataset generation, training, segmentation,
evaluation, benchmarks and the end-to-end experiment graph.

Exit codes:
    0  success
    1  I/O or file-format failure
    2  bad arguments, invalid configuration, existing outputs without --force
    3  training diverged (non-finite loss)
    4  checkpoint missing, incompatible, or trained for another image size
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

# Fix path to allow imports from project root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import logging
from logging.handlers import RotatingFileHandler

import numpy as np

from src.config import Config, RunConfig, load_run_config
from src.dataio.checkpoint import load_checkpoint
from src.dataio.dataset import MANIFEST_NAME
from src.dataio.formats import atomic_write, read_image, read_mask, write_mask, write_tensor
from src.dataio.outputs import OutputDir
from src.errors import CheckpointError, ConfigError, LDSegError
from src.evaluation.bench import (
    bench_noise,
    bench_size,
    bench_steps,
    minimal_steps,
    size_ratio,
    summarize,
    write_records,
)
from src.evaluation.metrics import MetricReport
from src.evaluation.report import render_line_chart, render_summary, save_label_preview, save_preview
from src.nodes.data import generate_data
from src.nodes.evaluator import evaluate_directories, evaluate_models, load_test_split
from src.nodes.reporter import write_report
from src.nodes.training import run_training
from src.pipeline.sampling import SAMPLERS, segment
from src.pipeline.training import load_baseline
from src.pipeline.uncertainty import boundary_band_statistics, estimate_uncertainty
from src.pipeline.variants import VariantSpec, load_segmentation_model

LOG_FILE_NAME = "app.log"

logger = logging.getLogger("LDSeg")


def setup_logging(level: Optional[str] = None):
    """Configure logging to file and console."""
    logger = logging.getLogger("LDSeg")
    logger.setLevel(logging.DEBUG)

    # Formatters
    file_formatter = logging.Formatter('%(asctime)s [%(levelname)s] %(name)s: %(message)s')
    console_formatter = logging.Formatter('%(asctime)s [%(levelname)s] %(message)s', datefmt='%H:%M:%S')

    # Add Handlers
    if not logger.handlers:
        os.makedirs(Config.LOG_DIR, exist_ok=True)
        file_handler = RotatingFileHandler(
            os.path.join(Config.LOG_DIR, LOG_FILE_NAME), maxBytes=5*1024*1024, backupCount=5, encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(file_formatter)

        console_handler = logging.StreamHandler()
        console_handler.setLevel(level or Config.LOG_LEVEL)
        console_handler.setFormatter(console_formatter)

        logger.addHandler(file_handler)
        logger.addHandler(console_handler)

    return logger


# ============ Argument Types ============

def int_list(value: str) -> List[int]:
    """Comma-separated integers ("2,10,1000")."""
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'")


def float_list(value: str) -> List[float]:
    """Comma-separated floats ("0,0.1,0.2")."""
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'")


def step_spec(value: str):
    """A step count K, or an explicit comma-separated step list."""
    if "," in value:
        return int_list(value)
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K or a comma-separated step list, got '{value}'")


def manifest_path(value: str) -> Path:
    """A manifest.tsv file or the dataset directory holding it."""
    path = Path(value)
    return path / MANIFEST_NAME if path.is_dir() else path


# ============ Helpers ============

def _config(args, overrides: Optional[dict] = None) -> RunConfig:
    return load_run_config(args.config, overrides)


def _output(args) -> OutputDir:
    return OutputDir(args.out, args.command, force=args.force)


def _steps_for(steps, model, cfg: RunConfig):
    return steps if steps is not None else min(cfg.sample.steps, model.schedule.T)


def _variant(name: str) -> VariantSpec:
    try:
        return VariantSpec.from_name(name)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _write_json(path: Path, payload: dict) -> Path:
    return atomic_write(path, json.dumps(payload, indent=2).encode("utf-8"))


# ============ Commands ============

def cmd_gen_data(args) -> int:
    cfg = _config(args, {"data.n": args.n, "data.size": args.size, "data.seed": args.seed})
    out = _output(args)
    manifest = generate_data(cfg, out)
    out.write_index()
    print(f"✅ {len(manifest.entries)} samples -> {out.root / MANIFEST_NAME}")
    return 0


def _train(args, kind: str) -> int:
    overrides = {"train.seed": args.seed}
    epochs_key = {"autoencoder": "ae_epochs", "denoiser": "cd_epochs", "baseline": "baseline_epochs"}[kind]
    overrides[f"train.{epochs_key}"] = args.epochs
    if getattr(args, "variant", None):
        variant = _variant(args.variant)
        overrides.update({
            "train.mask_path": variant.mask_path,
            "train.image_path": variant.image_path,
            "train.full_resolution": variant.full_resolution,
        })
    cfg = _config(args, overrides)
    ae_checkpoint = getattr(args, "ae_checkpoint", None)
    if kind == "denoiser" and cfg.train.variant.uses_autoencoder and ae_checkpoint is None:
        raise ConfigError(f"train-cd for {cfg.train.variant.name} requires --ae-checkpoint")
    out = _output(args)
    path = run_training(kind, cfg, args.data, out, ae_checkpoint=ae_checkpoint, resume=args.resume)
    out.write_index()
    print(f"✅ {kind} checkpoint -> {path}")
    return 0


def cmd_train_ae(args) -> int:
    return _train(args, "autoencoder")


def cmd_train_cd(args) -> int:
    return _train(args, "denoiser")


def cmd_train_baseline(args) -> int:
    return _train(args, "baseline")


def cmd_segment(args) -> int:
    cfg = _config(args, {"sample.sampler": args.sampler, "sample.seed": args.seed})
    model = load_segmentation_model(args.ckpt_dir)
    image = read_image(args.image)
    steps = _steps_for(args.steps, model, cfg)
    out = _output(args)
    stem = Path(args.image).stem
    mask_path = out.claim(f"{stem}_mask.pgm")
    preview_path = out.claim(f"{stem}_mask.png")
    trajectory_path = out.claim(f"{stem}_trajectory.tnsr") if args.trajectory else None

    if args.variant and _variant(args.variant) != model.variant:
        raise CheckpointError(f"checkpoints in {args.ckpt_dir} belong to {model.name}, requested {args.variant}")
    trajectory = [] if args.trajectory else None
    labels = segment(image, model, steps, cfg.sample.sampler, cfg.sample.seed, trajectory=trajectory)[0]

    write_mask(mask_path, labels)
    save_label_preview(labels, preview_path, model.cfg.num_classes)
    if trajectory_path is not None:
        write_tensor(trajectory_path, np.stack(trajectory))
    out.write_index()
    print(f"✅ {model.name} mask -> {mask_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _output(args)
    if args.pred or args.truth:
        if not (args.pred and args.truth):
            raise ConfigError("--pred and --truth must be given together")
        num_classes = args.num_classes or cfg.model.num_classes
        report, per_file = evaluate_directories(args.pred, args.truth, num_classes)
        csv_path = out.claim("eval.csv")
        atomic_write(csv_path, per_file.to_csv(index=False, float_format="%.17g").encode("utf-8"))
        render_summary({Path(args.pred).name: report}, out.claim("eval_summary.png"))
        reports = {Path(args.pred).name: report}
    else:
        if not (args.data and args.ckpt_dir):
            raise ConfigError("eval needs --pred/--truth or --data/--ckpt-dir")
        reports = evaluate_models(cfg, args.data, args.ckpt_dir, args.sigmas or (0.0,))
        write_report(reports, out)
    out.write_index()
    _print_reports(reports)
    return 0


def cmd_bench_steps(args) -> int:
    cfg = _config(args, {
        "bench.k_list": args.k_list,
        "bench.samplers": args.samplers,
        "bench.test_samples": args.limit,
        "sample.seed": args.seed,
    })
    models = [load_segmentation_model(d) for d in args.ckpt_dir]
    data = load_test_split(args.data, cfg.bench.test_samples)
    out = _output(args)
    csv_path = out.claim("bench_steps.csv")
    min_path = out.claim("bench_steps_min.csv")
    chart_path = out.claim("bench_steps.png")

    records = bench_steps(models, data, cfg.bench.k_list, cfg.bench.samplers, cfg.sample.seed)
    write_records(csv_path, records)
    minimal = minimal_steps(records, cfg.bench.min_k_tolerance)
    rows = ["config,sampler,min_steps"] + [f"{c},{s},{k}" for (c, s), k in sorted(minimal.items())]
    atomic_write(min_path, ("\n".join(rows) + "\n").encode("utf-8"))
    table = summarize(records, ["config", "sampler", "steps"])
    table["series"] = table["config"] + " " + table["sampler"]
    render_line_chart(table, "steps", "dsc", "series", "DSC vs pasos de muestreo", chart_path, log_x=True)
    out.write_index()
    for (config, sampler), k in sorted(minimal.items()):
        print(f"⏱️ {config} {sampler}: minimal K = {k}")
    return 0


def cmd_bench_size(args) -> int:
    cfg = _config(args, {
        "bench.sizes": args.sizes,
        "bench.fixed_k": args.k,
        "bench.repeats": args.repeats,
        "bench.warmup": args.warmup,
        "sample.sampler": args.sampler,
        "sample.seed": args.seed,
    })
    out = _output(args)
    csv_path = out.claim("bench_size.csv")
    chart_path = out.claim("bench_size.png")

    records = bench_size(
        cfg.model, cfg.train, cfg.bench.sizes, cfg.bench.fixed_k, cfg.bench.repeats,
        cfg.bench.warmup, cfg.sample.seed, cfg.sample.sampler,
    )
    write_records(csv_path, records)
    render_line_chart(
        summarize(records, ["config", "size"]), "size", "seconds", "config", "Latencia vs tamano de imagen", chart_path
    )
    out.write_index()
    for config in sorted({r.config for r in records}):
        print(f"⏱️ {config}: largest/smallest size time ratio = {size_ratio(records, config):.2f}")
    return 0


def cmd_bench_noise(args) -> int:
    cfg = _config(args, {
        "bench.sigmas": args.sigmas,
        "bench.fixed_k": args.k,
        "bench.test_samples": args.limit,
        "sample.sampler": args.sampler,
        "sample.seed": args.seed,
    })
    ckpt_dir = Path(args.ckpt_dir)
    model = load_segmentation_model(ckpt_dir)
    baseline = load_baseline(load_checkpoint(ckpt_dir / Config.CHECKPOINT_FILES["baseline"], kind="baseline"))
    data = load_test_split(args.data, cfg.bench.test_samples)
    out = _output(args)
    csv_path = out.claim("bench_noise.csv")
    chart_path = out.claim("bench_noise.png")

    records = bench_noise(model, baseline, data, cfg.bench.sigmas, cfg.bench.fixed_k, cfg.sample.sampler, cfg.sample.seed)
    write_records(csv_path, records)
    table = summarize(records, ["config", "sigma"])
    render_line_chart(table, "sigma", "dsc", "config", "DSC vs ruido gaussiano", chart_path)
    out.write_index()
    for row in table.itertuples():
        print(f"🌫️ {row.config} sigma={row.sigma:g}: DSC={row.dsc:.4f}")
    return 0


def cmd_uncertainty(args) -> int:
    cfg = _config(args, {
        "sample.runs": args.runs,
        "sample.sampler": args.sampler,
        "sample.seed": args.seed,
        "sample.workers": args.workers,
    })
    model = load_segmentation_model(args.ckpt_dir)
    image = read_image(args.image)
    out = _output(args)
    stem = Path(args.image).stem
    paths = {name: out.claim(f"{stem}_{name}") for name in (
        "mean.tnsr", "sd.tnsr", "per_class_sd.tnsr", "sd.png", "labels.png",
    )}
    band_path = out.claim(f"{stem}_band.json") if args.truth else None

    result = estimate_uncertainty(
        image, model, _steps_for(args.steps, model, cfg), cfg.sample.runs,
        cfg.sample.seed, cfg.sample.sampler, cfg.sample.workers,
    )
    write_tensor(paths["mean.tnsr"], result.mean)
    write_tensor(paths["sd.tnsr"], result.sd)
    write_tensor(paths["per_class_sd.tnsr"], result.per_class_sd)
    save_preview(result.sd, paths["sd.png"])
    save_label_preview(result.labels, paths["labels.png"], model.cfg.num_classes)
    if band_path is not None:
        stats = boundary_band_statistics(result.sd, read_mask(args.truth), args.band_width)
        _write_json(band_path, stats)
        print(f"🎲 boundary band SD {stats['band_mean_sd']:.4f} vs interior {stats['interior_mean_sd']:.4f}")
    out.write_index()
    print(f"✅ {result.runs} runs, max SD {float(result.sd.max()):.4f} -> {paths['sd.png']}")
    return 0


def cmd_run(args) -> int:
    from src.graph import compile_experiment_graph
    from src.state import create_initial_state

    cfg = _config(args, {"data.n": args.n, "data.size": args.size, "data.seed": args.seed})
    logger.info("🚀 Starting LDSeg experiment workflow")
    logger.debug(f"⚙️  Config: {cfg.model_dump()}")
    app = compile_experiment_graph()
    state = create_initial_state(cfg.model_dump(mode="json"), str(args.out), args.force)
    final = app.invoke(state, config={"configurable": {"thread_id": args.thread_id}})

    out = _output(args)
    out.produced.extend(Path(p) for p in final.get("produced_files", []))
    if out.produced:
        out.write_index()

    if final.get("metrics"):
        _print_reports({name: MetricReport.model_validate(r) for name, r in final["metrics"].items()})
    if final.get("report_image_path"):
        logger.info(f"✅ Report Image: {final['report_image_path']}")
    for error in final.get("errors", []):
        print(f"❌ {error['node']}: {error['message']}", file=sys.stderr)
    logger.info("🏁 Workflow Finished")
    return int(final.get("exit_code", 0))


def _print_reports(reports) -> None:
    print("\n📊 === EVALUATION SUMMARY ===")
    for name, report in reports.items():
        print(f"   {name}: {report.summary()}")


# ============ Parser ============

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldseg",
        description="LDSeg: latent diffusion segmentation experiments",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        epilog="exit codes: 0 ok, 1 I/O, 2 bad arguments/config, 3 divergence, 4 checkpoint",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML run configuration ([data] [model] [train] [sample] [bench])")
    common.add_argument("--out", type=Path, required=True, help="Output directory")
    common.add_argument("--force", action="store_true", help="Overwrite existing outputs")

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "Generate the synthetic image/mask dataset and manifest")
    p.add_argument("--n", type=int, default=None, help="Number of samples (config data.n)")
    p.add_argument("--size", type=int, default=None, help="Image side length (config data.size)")
    p.add_argument("--seed", type=int, default=None, help="Dataset seed (config data.seed)")

    for name, func, what in (
        ("train-ae", cmd_train_ae, "Train the mask autoencoder"),
        ("train-cd", cmd_train_cd, "Train the conditional denoiser"),
        ("train-baseline", cmd_train_baseline, "Train the Res-Unet baseline"),
    ):
        p = add(name, func, what)
        p.add_argument("--data", type=manifest_path, required=True, help="Dataset directory or manifest.tsv")
        p.add_argument("--resume", type=Path, default=None, help="Checkpoint to continue training from")
        p.add_argument("--epochs", type=int, default=None, help="Epoch count (config train.*_epochs)")
        p.add_argument("--seed", type=int, default=None, help="Training seed (config train.seed)")
        if name == "train-cd":
            p.add_argument("--ae-checkpoint", type=Path, default=None, help="Trained autoencoder checkpoint")
            p.add_argument("--variant", default=None, help="LDSeg, LDSeg_(md), LDSeg_(id) or LDSeg_(md,id), optional @full suffix")

    p = add("segment", cmd_segment, "Segment one P5 image with trained checkpoints")
    p.add_argument("--image", type=Path, required=True, help="Input image (P5)")
    p.add_argument("--ckpt-dir", type=Path, required=True, help="Directory with denoiser.ldsc (and autoencoder.ldsc)")
    p.add_argument("--steps", type=step_spec, default=None, help="K sampling steps or an explicit step list (default sample.steps)")
    p.add_argument("--sampler", choices=SAMPLERS, default=None, help="Reverse sampler (config sample.sampler)")
    p.add_argument("--seed", type=int, default=None, help="Sampling seed (config sample.seed)")
    p.add_argument("--variant", default=None, help="Require checkpoints of this variant")
    p.add_argument("--trajectory", action="store_true", help="Also write the latent trajectory as TNSR")

    p = add("eval", cmd_eval, "Score predicted masks (directories) or trained checkpoints (test split)")
    p.add_argument("--pred", type=Path, default=None, help="Directory of predicted P5 masks")
    p.add_argument("--truth", type=Path, default=None, help="Directory of ground-truth P5 masks (same file names)")
    p.add_argument("--num-classes", type=int, default=None, help="Classes (config model.num_classes)")
    p.add_argument("--data", type=manifest_path, default=None, help="Dataset directory or manifest.tsv")
    p.add_argument("--ckpt-dir", type=Path, default=None, help="Checkpoint directory")
    p.add_argument("--sigmas", type=float_list, default=None, help="Noise levels to evaluate, e.g. 0,0.2")

    p = add("bench-steps", cmd_bench_steps, "DSC and time against the number of sampling steps")
    p.add_argument("--data", type=manifest_path, required=True, help="Dataset directory or manifest.tsv")
    p.add_argument("--ckpt-dir", type=Path, nargs="+", required=True, help="One checkpoint directory per variant")
    p.add_argument("--k-list", type=int_list, default=None, help="Step counts, e.g. 2,10,1000 (config bench.k_list)")
    p.add_argument("--samplers", type=lambda v: v.split(","), default=None, help="ddpm,ddim (config bench.samplers)")
    p.add_argument("--limit", type=int, default=None, help="Test images used (config bench.test_samples)")
    p.add_argument("--seed", type=int, default=None, help="Sampling seed (config sample.seed)")

    p = add("bench-size", cmd_bench_size, "Single-image latency against image size")
    p.add_argument("--sizes", type=int_list, default=None, help="Image sizes, e.g. 64,128,256 (config bench.sizes)")
    p.add_argument("--k", type=int, default=None, help="Sampling steps (config bench.fixed_k)")
    p.add_argument("--repeats", type=int, default=None, help="Timed repeats (config bench.repeats)")
    p.add_argument("--warmup", type=int, default=None, help="Untimed warm-up calls (config bench.warmup)")
    p.add_argument("--sampler", choices=SAMPLERS, default=None, help="Reverse sampler (config sample.sampler)")
    p.add_argument("--seed", type=int, default=None, help="Seed (config sample.seed)")

    p = add("bench-noise", cmd_bench_noise, "DSC of LDSeg and Res-Unet under Gaussian image noise")
    p.add_argument("--data", type=manifest_path, required=True, help="Dataset directory or manifest.tsv")
    p.add_argument("--ckpt-dir", type=Path, required=True, help="Directory with denoiser, autoencoder and baseline")
    p.add_argument("--sigmas", type=float_list, default=None, help="Noise levels (config bench.sigmas)")
    p.add_argument("--k", type=int, default=None, help="Sampling steps (config bench.fixed_k)")
    p.add_argument("--limit", type=int, default=None, help="Test images used (config bench.test_samples)")
    p.add_argument("--sampler", choices=SAMPLERS, default=None, help="Reverse sampler (config sample.sampler)")
    p.add_argument("--seed", type=int, default=None, help="Seed (config sample.seed)")

    p = add("uncertainty", cmd_uncertainty, "Mean and SD maps over repeated sampling runs")
    p.add_argument("--image", type=Path, required=True, help="Input image (P5)")
    p.add_argument("--ckpt-dir", type=Path, required=True, help="Checkpoint directory")
    p.add_argument("--runs", type=int, default=None, help="Sampling runs (config sample.runs)")
    p.add_argument("--steps", type=step_spec, default=None, help="K sampling steps or a step list")
    p.add_argument("--sampler", choices=SAMPLERS, default=None, help="Reverse sampler (config sample.sampler)")
    p.add_argument("--seed", type=int, default=None, help="Sampling seed (config sample.seed)")
    p.add_argument("--workers", type=int, default=None, help="Parallel runs (config sample.workers, else LDSEG_WORKERS)")
    p.add_argument("--truth", type=Path, default=None, help="Ground-truth mask for boundary band statistics")
    p.add_argument("--band-width", type=int, default=2, help="Boundary band width in pixels")

    p = add("run", cmd_run, "Full experiment graph: data, training, evaluation, report")
    p.add_argument("--n", type=int, default=None, help="Number of samples (config data.n)")
    p.add_argument("--size", type=int, default=None, help="Image side length (config data.size)")
    p.add_argument("--seed", type=int, default=None, help="Dataset seed (config data.seed)")
    p.add_argument("--thread-id", default="ldseg-run", help="Checkpointer thread id")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        invalid = Config.validate()
        if invalid:
            raise ConfigError(f"invalid environment settings: {', '.join(invalid)}")
        return args.func(args)
    except LDSegError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ {args.command} I/O failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
