"""
LDSeg - Benchmarks
Steps-vs-accuracy, image-size-vs-latency and noise-robustness harnesses.
Every harness returns BenchRecords (one row per image and setting) that are
written to and read back from CSV with pandas.
"""

import logging
import math
import time
from statistics import median
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from src.config import ModelConfig, TrainConfig
from src.dataio.dataset import SegmentationData
from src.dataio.formats import PathLike, atomic_write
from src.dataio.synthetic import corrupt, generate_sample
from src.evaluation.metrics import dsc, iou
from src.models.baseline import ResUnet, baseline_segment
from src.pipeline.sampling import resolve_steps, segment
from src.pipeline.variants import (
    BASELINE_INIT,
    SegmentationModel,
    VariantSpec,
    build_segmentation_model,
    init_rng,
)

logger = logging.getLogger("LDSeg.Bench")

BENCH_COLUMNS = ["config", "sampler", "steps", "size", "sigma", "image", "seconds", "dsc", "iou"]
BASELINE_NAME = "Res-Unet"


class BenchRecord(BaseModel):
    config: str
    sampler: str = ""
    steps: int = 0
    size: int = Field(ge=1)
    sigma: float = 0.0
    image: int = -1
    seconds: float = Field(gt=0.0)
    dsc: Optional[float] = Field(None, ge=0.0, le=1.0)
    iou: Optional[float] = Field(None, ge=0.0, le=1.0)


# ============ CSV ============

def records_frame(records: Sequence[BenchRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in records], columns=BENCH_COLUMNS)


def write_records(path: PathLike, records: Sequence[BenchRecord]):
    return atomic_write(path, records_frame(records).to_csv(index=False, float_format="%.17g").encode("utf-8"))


def read_records(path: PathLike) -> List[BenchRecord]:
    frame = pd.read_csv(path, dtype={"config": str, "sampler": str}, keep_default_na=False, na_values=[""])
    rows = []
    for row in frame.to_dict(orient="records"):
        clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
        clean["sampler"] = clean["sampler"] or ""
        rows.append(BenchRecord.model_validate(clean))
    return rows


def summarize(records: Sequence[BenchRecord], by: Sequence[str]) -> pd.DataFrame:
    """Mean DSC/IoU and median seconds per group."""
    frame = records_frame(records)
    return (
        frame.groupby(list(by), sort=True)
        .agg(dsc=("dsc", "mean"), iou=("iou", "mean"), seconds=("seconds", "median"), images=("image", "count"))
        .reset_index()
    )


# ============ Timing ============

def time_call(fn: Callable[[], object], repeats: int = 5, warmup: int = 1) -> float:
    """Median wall-clock seconds of `repeats` calls after `warmup` untimed calls."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return max(median(samples), 1e-9)


def _timed(fn: Callable[[], np.ndarray]) -> Tuple[np.ndarray, float]:
    start = time.perf_counter()
    out = fn()
    return out, max(time.perf_counter() - start, 1e-9)


def segment_indexed(model: SegmentationModel, image, steps, sampler: str, seed: int, index: int) -> np.ndarray:
    """Single-image segmentation drawing from sampling run `index`, as segment(..., run=index) does."""
    return segment(image, model, steps, sampler, seed, run=index)[0]


# ============ Steps vs Accuracy ============

def bench_steps(
    models: Sequence[SegmentationModel],
    data: SegmentationData,
    k_list: Sequence[int],
    samplers: Sequence[str] = ("ddpm", "ddim"),
    seed: int = 0,
) -> List[BenchRecord]:
    """DSC and time per (model, sampler, K, test image)."""
    records = []
    for model in models:
        T = model.schedule.T
        for sampler in samplers:
            for K in k_list:
                steps = resolve_steps(int(K), T)
                for index in range(len(data)):
                    pred, seconds = _timed(
                        lambda: segment_indexed(model, data.images[index], steps, sampler, seed, index)
                    )
                    truth = data.masks[index]
                    records.append(BenchRecord(
                        config=model.name, sampler=sampler, steps=int(K), size=data.images.shape[-1],
                        image=index, seconds=seconds, dsc=dsc(pred, truth, None), iou=iou(pred, truth, None),
                    ))
                group = records[-len(data):] if len(data) else []
                logger.info(
                    f"⏱️ {model.name} {sampler} K={K}: DSC={np.mean([r.dsc for r in group]) if group else float('nan'):.4f}"
                )
    return records


def minimal_steps(records: Sequence[BenchRecord], tolerance: float = 0.005) -> Dict[Tuple[str, str], int]:
    """
    Per (config, sampler): the smallest K whose mean DSC is within `tolerance`
    of the mean DSC at the largest K benchmarked.
    """
    table = summarize(records, ["config", "sampler", "steps"])
    result = {}
    for (config, sampler), group in table.groupby(["config", "sampler"], sort=True):
        group = group.sort_values("steps")
        reference = float(group["dsc"].iloc[-1])
        within = group[group["dsc"] >= reference - tolerance]
        result[(config, sampler)] = int(within["steps"].iloc[0])
    return result


# ============ Size vs Latency ============

def bench_size(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sizes: Sequence[int],
    k: int = 50,
    repeats: int = 5,
    warmup: int = 1,
    seed: int = 0,
    sampler: str = "ddpm",
    models: Optional[Dict[Tuple[str, int], SegmentationModel]] = None,
) -> List[BenchRecord]:
    """
    Single-image latency at each size for LDSeg, the full-resolution
    LDSeg_(md,id) and the Res-Unet baseline. `models` supplies trained
    networks keyed by (variant name, size); other entries are freshly
    initialised at that size.
    """
    schedule = train_cfg.make_schedule()
    variants = (VariantSpec(), VariantSpec(mask_path="nearest-downsample", image_path="nearest-downsample", full_resolution=True))
    records = []
    for size in sizes:
        cfg = model_cfg.resized(size)
        image = generate_sample(0, size, seed).image
        for variant in variants:
            model = (models or {}).get((variant.name, size)) or build_segmentation_model(cfg, variant, schedule, seed)
            steps = resolve_steps(min(k, schedule.T), schedule.T)
            seconds = time_call(lambda: segment_indexed(model, image, steps, sampler, seed, 0), repeats, warmup)
            records.append(BenchRecord(config=variant.name, sampler=sampler, steps=len(steps), size=size, seconds=seconds))
            logger.info(f"⏱️ {variant.name} {size}x{size}: {seconds:.4f}s")
        net = ResUnet(cfg, init_rng(seed, BASELINE_INIT))
        seconds = time_call(lambda: baseline_segment(image, net), repeats, warmup)
        records.append(BenchRecord(config=BASELINE_NAME, size=size, seconds=seconds))
        logger.info(f"⏱️ {BASELINE_NAME} {size}x{size}: {seconds:.4f}s")
    return records


def size_ratio(records: Sequence[BenchRecord], config: str) -> float:
    """Time at the largest size over time at the smallest size."""
    rows = sorted((r for r in records if r.config == config), key=lambda r: r.size)
    return rows[-1].seconds / rows[0].seconds


# ============ Noise Robustness ============

def bench_noise(
    model: SegmentationModel,
    baseline: ResUnet,
    data: SegmentationData,
    sigmas: Sequence[float],
    k: Optional[int] = 50,
    sampler: str = "ddpm",
    seed: int = 0,
) -> List[BenchRecord]:
    """DSC per sigma per model on test images corrupted with N(0, sigma^2) noise."""
    steps = resolve_steps(min(k, model.schedule.T) if k else None, model.schedule.T)
    size = data.images.shape[-1]
    records = []
    for sigma in sigmas:
        for index in range(len(data)):
            noisy = corrupt(data.images[index], sigma, seed, index)
            truth = data.masks[index]
            pred, seconds = _timed(lambda: segment_indexed(model, noisy, steps, sampler, seed, index))
            records.append(BenchRecord(
                config=model.name, sampler=sampler, steps=len(steps), size=size, sigma=sigma,
                image=index, seconds=seconds, dsc=dsc(pred, truth, None), iou=iou(pred, truth, None),
            ))
            pred, seconds = _timed(lambda: baseline_segment(noisy, baseline)[0])
            records.append(BenchRecord(
                config=BASELINE_NAME, size=size, sigma=sigma, image=index, seconds=seconds,
                dsc=dsc(pred, truth, None), iou=iou(pred, truth, None),
            ))
        logger.info(f"🌫️ sigma={sigma}: {len(data)} images scored")
    return records
