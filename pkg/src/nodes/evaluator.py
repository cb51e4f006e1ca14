"""
LDSeg - Evaluator Node
Segments the held-out split with the trained models (clean and corrupted)
and scores predictions against the ground-truth masks.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.config import Config, RunConfig
from src.dataio.checkpoint import load_checkpoint
from src.dataio.dataset import DatasetManifest, SegmentationData, load_split
from src.dataio.formats import PathLike, read_mask
from src.dataio.synthetic import corrupt
from src.errors import DimensionError, FormatError
from src.evaluation.bench import BASELINE_NAME, segment_indexed
from src.evaluation.metrics import MetricReport, dsc, evaluate, iou
from src.models.baseline import baseline_segment
from src.nodes.common import failure, has_failed, run_config
from src.pipeline.sampling import resolve_steps
from src.pipeline.training import load_baseline
from src.pipeline.variants import SegmentationModel, load_segmentation_model
from src.state import ExperimentState

logger = logging.getLogger("LDSeg.Graph")

ROBUSTNESS_SIGMA = 0.2


def load_test_split(manifest_path: PathLike, limit: Optional[int] = None) -> SegmentationData:
    return load_split(DatasetManifest.read(manifest_path), "test", limit)


def segment_split(model: SegmentationModel, data: SegmentationData, steps, sampler: str, seed: int,
                  sigma: float = 0.0) -> np.ndarray:
    """Predicted label maps (N, H, W) for every (optionally corrupted) image of a split."""
    T = model.schedule.T
    kept = resolve_steps(min(steps, T) if isinstance(steps, int) else steps, T)
    preds = [
        segment_indexed(model, corrupt(image, sigma, seed, i), kept, sampler, seed, i)
        for i, image in enumerate(data.images)
    ]
    return np.stack(preds) if preds else np.zeros_like(data.masks)


def evaluate_models(
    cfg: RunConfig,
    manifest_path: PathLike,
    ckpt_dir: PathLike,
    sigmas=(0.0,),
) -> Dict[str, MetricReport]:
    """
    MetricReports keyed "<model>" (sigma 0) or "<model> sigma=<s>" for the
    diffusion model in ckpt_dir and, when present, the Res-Unet baseline.
    """
    ckpt_dir = Path(ckpt_dir)
    data = load_test_split(manifest_path, cfg.bench.test_samples)
    model = load_segmentation_model(ckpt_dir)
    baseline_path = ckpt_dir / Config.CHECKPOINT_FILES["baseline"]
    baseline = load_baseline(load_checkpoint(baseline_path)) if baseline_path.is_file() else None
    num_classes = model.cfg.num_classes

    reports = {}
    for sigma in sigmas:
        suffix = f" sigma={sigma:g}" if sigma else ""
        preds = segment_split(model, data, cfg.sample.steps, cfg.sample.sampler, cfg.sample.seed, sigma)
        reports[f"{model.name}{suffix}"] = evaluate(preds, data.masks, num_classes)
        if baseline is not None:
            noisy = [corrupt(image, sigma, cfg.sample.seed, i) for i, image in enumerate(data.images)]
            preds = np.concatenate([baseline_segment(image, baseline) for image in noisy]) if noisy else data.masks
            reports[f"{BASELINE_NAME}{suffix}"] = evaluate(preds, data.masks, num_classes)
    for name, report in reports.items():
        logger.info(f"📏 {name}: {report.summary()}")
    return reports


def evaluate_directories(pred_dir: PathLike, truth_dir: PathLike, num_classes: int) -> Tuple[MetricReport, pd.DataFrame]:
    """
    Score every P5 mask in pred_dir against the same-named file in truth_dir.

    Raises:
        FormatError: a prediction has no ground truth counterpart
        DimensionError: mismatched mask shapes
    """
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    rows: List[dict] = []
    preds, truths = [], []
    for pred_path in sorted(pred_dir.glob("*.pgm")):
        truth_path = truth_dir / pred_path.name
        if not truth_path.is_file():
            raise FormatError(f"no ground truth for {pred_path.name} in {truth_dir}")
        pred, truth = read_mask(pred_path), read_mask(truth_path)
        if pred.shape != truth.shape:
            raise DimensionError(f"{pred_path.name}: prediction {pred.shape} vs truth {truth.shape}")
        preds.append(pred)
        truths.append(truth)
        rows.append({"file": pred_path.name, "dsc": dsc(pred, truth, None), "iou": iou(pred, truth, None)})
    return evaluate(preds, truths, num_classes), pd.DataFrame(rows, columns=["file", "dsc", "iou"])


def evaluate_node(state: ExperimentState) -> dict:
    """
    Evaluator Node:
    - Segments the test split with LDSeg and the baseline, clean and at sigma 0.2.
    - Stores MetricReports for the reporter.
    """
    if has_failed(state):
        return {"logs": ["⏭️ evaluate skipped after an earlier failure"]}
    logger.info("📏 Evaluating trained models on the test split...")
    try:
        ckpt_dir = Path(state["denoiser_path"]).parent
        reports = evaluate_models(run_config(state), state["manifest_path"], ckpt_dir, (0.0, ROBUSTNESS_SIGMA))
    except Exception as e:
        return failure("evaluate", e)
    return {
        "current_step": "evaluate",
        "metrics": {name: report.model_dump(mode="json") for name, report in reports.items()},
        "logs": [f"📏 {name}: {report.summary()}" for name, report in reports.items()],
    }
