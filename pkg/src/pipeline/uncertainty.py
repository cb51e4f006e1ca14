"""
LDSeg - Ensemble Uncertainty
Repeated stochastic segmentation of one image; the per-pixel spread of the
runs is the uncertainty map.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy import ndimage

from src.config import Config
from src.errors import DimensionError, RangeError
from src.pipeline.sampling import Steps, segment_probabilities
from src.pipeline.variants import SegmentationModel

logger = logging.getLogger("LDSeg.Uncertainty")


@dataclass
class UncertaintyResult:
    mean: np.ndarray  # (C, H, W) class probabilities averaged over runs
    sd: np.ndarray  # (H, W)
    per_class_sd: np.ndarray  # (C, H, W)
    runs: int

    @property
    def labels(self) -> np.ndarray:
        """Majority segmentation from the mean map."""
        return np.argmax(self.mean, axis=0)


def estimate_uncertainty(
    image,
    model: SegmentationModel,
    steps: Steps = None,
    runs: int = 100,
    seed: int = 0,
    sampler: str = "ddpm",
    workers: Optional[int] = None,
) -> UncertaintyResult:
    """
    `runs` independent segmentations (run r uses sampling stream 2 + r).

    Runs execute in a thread pool over the shared read-only model and are
    reduced in run order, so the result does not depend on `workers`.
    The SD map is the class-average of the per-class population SD of the
    decoded probabilities.
    """
    if runs < 1:
        raise RangeError(f"runs must be >= 1, got {runs}")
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise DimensionError(f"expected a single (H, W) image, got {image.shape}")

    def _run(r: int) -> np.ndarray:
        probs, _ = segment_probabilities(image, model, steps, sampler, seed, run=r)
        return probs[0]

    workers = workers or Config.WORKERS
    logger.info(f"🎲 {runs} sampling runs of {model.name} ({sampler}, workers={workers})")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        stack = np.stack(list(pool.map(_run, range(runs))))

    per_class_sd = stack.std(axis=0)
    return UncertaintyResult(
        mean=stack.mean(axis=0),
        sd=per_class_sd.mean(axis=0),
        per_class_sd=per_class_sd,
        runs=runs,
    )


def boundary_band_statistics(sd, truth, width: int = 2) -> Dict[str, float]:
    """
    Mean SD inside a band of `width` pixels around every object boundary
    versus the mean SD of object pixels farther than `width` from it.
    """
    sd = np.asarray(sd, dtype=np.float64)
    truth = np.asarray(truth)
    if sd.shape != truth.shape:
        raise DimensionError(f"sd map {sd.shape} and mask {truth.shape} differ")
    band = np.zeros(truth.shape, dtype=bool)
    interior = np.zeros(truth.shape, dtype=bool)
    for cls in np.unique(truth):
        region = truth == cls
        inside = ndimage.distance_transform_edt(region)
        outside = ndimage.distance_transform_edt(~region)
        band |= (region & (inside <= width)) | (~region & (outside <= width))
        if cls != 0:
            interior |= region & (inside > width)
    interior &= ~band
    band_mean = float(sd[band].mean()) if band.any() else 0.0
    interior_mean = float(sd[interior].mean()) if interior.any() else 0.0
    return {
        "band_mean_sd": band_mean,
        "interior_mean_sd": interior_mean,
        "band_pixels": int(band.sum()),
        "interior_pixels": int(interior.sum()),
        "ratio": band_mean / interior_mean if interior_mean > 0 else float("inf"),
    }
