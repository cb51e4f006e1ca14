"""
LDSeg - Sampling for Segmentation
Start from a unit Gaussian latent, iterate the chosen reverse kernel over
the step subsequence in descending order, decode the final latent.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.diffusion.kernels import ddim_step, ddpm_step, evenly_spaced_subsequence, validate_subsequence
from src.diffusion.schedule import respace
from src.errors import CheckpointError, DimensionError, RangeError
from src.numerics.random import SAMPLING_STREAM, RngStream
from src.numerics.tensor import Tensor, no_grad
from src.pipeline.variants import SegmentationModel, VariantSpec

logger = logging.getLogger("LDSeg.Sampling")

SAMPLERS = ("ddpm", "ddim")

Steps = Union[None, int, Sequence[int]]


def resolve_steps(steps: Steps, T: int) -> List[int]:
    """None -> all of [1, T]; an int K -> the evenly spaced K-subsequence; a list is validated."""
    if steps is None:
        return list(range(1, T + 1))
    if isinstance(steps, (int, np.integer)):
        return evenly_spaced_subsequence(int(steps), T)
    return validate_subsequence(steps, T)


def sampling_rng(seed: int, run: int = 0) -> RngStream:
    """Run r of an experiment draws from stream 2 + r."""
    return RngStream(seed, SAMPLING_STREAM + run)


def _image_batch(images, model: SegmentationModel) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise DimensionError(f"images must be (H, W) or (N, H, W), got {images.shape}")
    size = model.cfg.image_size
    if images.shape[1:] != (size, size):
        raise CheckpointError(f"image {images.shape[2]}x{images.shape[1]} does not match checkpoint size {size}x{size}")
    return images


def reverse_process(
    images,
    model: SegmentationModel,
    steps: Steps = None,
    sampler: str = "ddpm",
    rng: Optional[RngStream] = None,
    trajectory: Optional[list] = None,
) -> np.ndarray:
    """
    Final latent m_0 for a batch of images.

    DDPM walks the schedule respaced to `steps` (identical to the full
    chain when steps cover [1, T]), querying the network at the original
    timestep; no noise is added on the last update. DDIM jumps between
    consecutive kept steps and lands on t = 0.

    Raises:
        RangeError: unknown sampler or bad step list
        CheckpointError: image size differs from the trained size
    """
    if sampler not in SAMPLERS:
        raise RangeError(f"unknown sampler '{sampler}', expected one of {SAMPLERS}")
    images = _image_batch(images, model)
    sched = model.schedule
    kept = resolve_steps(steps, sched.T)
    rng = rng or sampling_rng(0)

    with no_grad():
        e = model.embed(images)
        m = rng.normal(model.latent_shape(len(images), images.shape[1:]), dtype=np.float64)
        if trajectory is not None:
            trajectory.append(m.copy())

        def eps_at(latent: np.ndarray, t: int) -> np.ndarray:
            return model.predict_eps(Tensor(latent), e, np.full(len(images), t)).data.astype(np.float64)

        if sampler == "ddpm":
            rs = respace(sched, kept)
            for i in range(rs.T, 0, -1):
                eps = eps_at(m, int(rs.timesteps[i]))
                z = rng.normal(m.shape, dtype=np.float64) if i > 1 else None
                m = ddpm_step(m, eps, i, z, rs)
                if trajectory is not None:
                    trajectory.append(m.copy())
        else:
            pairs = zip(reversed(kept), list(reversed(kept[:-1])) + [0])
            for t, t_prev in pairs:
                m = ddim_step(m, eps_at(m, t), t, t_prev, sched)
                if trajectory is not None:
                    trajectory.append(m.copy())

    logger.debug(f"🌀 {model.name}: {sampler} over {len(kept)} steps for {len(images)} image(s)")
    return m.astype(np.float32)


def segment_probabilities(
    images,
    model: SegmentationModel,
    steps: Steps = None,
    sampler: str = "ddpm",
    seed: int = 0,
    run: int = 0,
    trajectory: Optional[list] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """(class probabilities (N, C, H, W), labels (N, H, W)) of one sampling run."""
    latent = reverse_process(images, model, steps, sampler, sampling_rng(seed, run), trajectory)
    return model.decode(latent)


def segment(
    images,
    model: SegmentationModel,
    steps: Steps = None,
    sampler: str = "ddpm",
    seed: int = 0,
    run: int = 0,
    trajectory: Optional[list] = None,
) -> np.ndarray:
    """Label map(s) (N, H, W) sampled for the given image(s)."""
    return segment_probabilities(images, model, steps, sampler, seed, run, trajectory)[1]


def segment_variant(
    images,
    variant: VariantSpec,
    model: SegmentationModel,
    steps: Steps = None,
    sampler: str = "ddpm",
    seed: int = 0,
) -> np.ndarray:
    """segment() with a check that `model` was trained for `variant`."""
    if model.variant != variant:
        raise CheckpointError(f"checkpoints belong to {model.name}, requested {variant.name}")
    return segment(images, model, steps, sampler, seed)
