"""
LDSeg - Synthetic Dataset
Two-object segmentation scenes (background, object A, object B) generated
deterministically per (seed, sample index), plus additive-noise corruption.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage
from tqdm import tqdm

from src.config import Config
from src.dataio.dataset import DatasetManifest, ManifestEntry, assign_splits
from src.dataio.formats import PathLike, write_image, write_mask
from src.errors import DimensionError, RangeError
from src.numerics.random import DATA_STREAM, RngStream

logger = logging.getLogger("LDSeg.DataIO")

GENERATOR_VERSION = "ldseg-synthetic/1"
NUM_CLASSES = 3
MIN_AREA, MAX_AREA = 0.03, 0.25
MARGIN_RANGE = (0.15, 0.5)
MAX_TEXTURE_SIGMA = 0.05
MAX_ATTEMPTS = 500

# Sub-stream keys under the data stream
SAMPLE_KEY = 0
SPLIT_KEY = 1
CORRUPT_KEY = 2


@dataclass
class SyntheticSample:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) int64 in {0, 1, 2}
    seed: int
    index: int


# ============ Shapes ============

def _draw_shape(rng: RngStream, size: int) -> np.ndarray:
    """Random ellipse or axis-aligned rectangle rasterized with Pillow."""
    area = rng.uniform(0.05, 0.18) * size * size
    aspect = rng.uniform(0.6, 1.6)
    kind = "ellipse" if rng.uniform() < 0.5 else "rectangle"
    if kind == "ellipse":
        half_w = np.sqrt(area * aspect / np.pi)
        half_h = np.sqrt(area / (np.pi * aspect))
    else:
        half_w = np.sqrt(area * aspect) / 2.0
        half_h = np.sqrt(area / aspect) / 2.0
    half_w = float(min(half_w, size / 2.0 - 1))
    half_h = float(min(half_h, size / 2.0 - 1))
    cx = rng.uniform(half_w, size - 1 - half_w)
    cy = rng.uniform(half_h, size - 1 - half_h)
    box = [cx - half_w, cy - half_h, cx + half_w, cy + half_h]

    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    if kind == "ellipse":
        draw.ellipse(box, fill=1)
    else:
        draw.rectangle(box, fill=1)
    return np.asarray(canvas, dtype=bool)


def _fallback_layout(size: int) -> np.ndarray:
    """Two fixed rectangles, used only if random placement keeps failing."""
    mask = np.zeros((size, size), dtype=np.int64)
    q = size // 4
    mask[q:2 * q, q // 2:q // 2 + q] = 1
    mask[2 * q:3 * q, 2 * q + q // 2:3 * q + q // 2] = 2
    return mask


def _place_objects(rng: RngStream, size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.int64)
    placed = 0
    for _ in range(MAX_ATTEMPTS):
        shape = _draw_shape(rng, size)
        fraction = shape.mean()
        if not MIN_AREA <= fraction <= MAX_AREA:
            continue
        occupied = ndimage.binary_dilation(mask > 0, iterations=1)
        if np.any(shape & occupied):
            continue
        placed += 1
        mask[shape] = placed
        if placed == NUM_CLASSES - 1:
            return mask
    logger.warning(f"⚠️ Object placement failed after {MAX_ATTEMPTS} attempts, using fallback layout")
    return _fallback_layout(size)


# ============ Samples ============

def generate_sample(index: int, size: int, seed: int) -> SyntheticSample:
    """
    Object A brighter and object B darker than the background, each by a
    margin drawn from [0.15, 0.5]; edges softened, texture noise added,
    intensities clipped to [0, 1].
    """
    rng = RngStream(seed, DATA_STREAM).child(SAMPLE_KEY, index)
    mask = _place_objects(rng, size)

    background = rng.uniform(0.45, 0.5)
    margin_a = rng.uniform(*MARGIN_RANGE)
    margin_b = rng.uniform(*MARGIN_RANGE)
    clean = np.full((size, size), background, dtype=np.float64)
    clean[mask == 1] = background + margin_a
    clean[mask == 2] = background - margin_b
    clean = ndimage.gaussian_filter(clean, sigma=0.5)

    texture = rng.uniform(0.01, MAX_TEXTURE_SIGMA)
    image = clean + rng.normal((size, size), scale=texture, dtype=np.float64)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return SyntheticSample(image=image, mask=mask, seed=seed, index=index)


def corrupt(image, sigma: float, seed: int, index: int = 0) -> np.ndarray:
    """I + N(0, sigma^2) per pixel; the result is not clipped."""
    if sigma < 0:
        raise RangeError(f"sigma must be >= 0, got {sigma}")
    image = np.asarray(image, dtype=np.float32)
    if sigma == 0:
        return image.copy()
    rng = RngStream(seed, DATA_STREAM).child(CORRUPT_KEY, index)
    return (image + rng.normal(image.shape, scale=sigma, dtype=np.float64)).astype(np.float32)


# ============ Dataset ============

def generate_dataset(
    n: int,
    size: int,
    seed: int,
    out_dir: PathLike,
    depth: int = 4,
    test_fraction: float = 0.2,
    workers: Optional[int] = None,
) -> DatasetManifest:
    """
    Write n image/mask pairs (P5) and manifest.tsv under out_dir.

    Raises:
        DimensionError: size not divisible by 2^depth
        RangeError: n < 1
    """
    if n < 1:
        raise RangeError(f"n must be >= 1, got {n}")
    if size % (2 ** depth):
        raise DimensionError(f"image size {size} not divisible by 2^{depth} = {2 ** depth}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    splits = assign_splits(n, test_fraction, RngStream(seed, DATA_STREAM).child(SPLIT_KEY))

    def _write(index: int) -> ManifestEntry:
        sample = generate_sample(index, size, seed)
        image_rel = f"images/{index:05d}.pgm"
        mask_rel = f"masks/{index:05d}.pgm"
        write_image(out_dir / image_rel, sample.image)
        write_mask(out_dir / mask_rel, sample.mask)
        return ManifestEntry(split=splits[index], image=image_rel, mask=mask_rel, seed=seed, index=index)

    workers = workers or Config.WORKERS
    logger.info(f"🎨 Generating {n} synthetic samples ({size}x{size}, seed={seed}, workers={workers})")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        entries = list(tqdm(pool.map(_write, range(n)), total=n, desc="gen-data", disable=not Config.PROGRESS))

    manifest = DatasetManifest(root=str(out_dir), generator_version=GENERATOR_VERSION, size=size, entries=entries)
    manifest.write(out_dir / "manifest.tsv")
    logger.info(f"✅ Dataset written: {manifest.count('train')} train / {manifest.count('test')} test")
    return manifest
