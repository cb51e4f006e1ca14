"""
LDSeg - Dataset Manifest and Loading
Line-oriented TSV manifest (split, image, mask, seed, index) and in-memory
splits for training and evaluation.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from src.dataio.formats import PathLike, atomic_write, read_image, read_mask
from src.errors import FormatError, HeaderError, RangeError
from src.numerics.random import RngStream

logger = logging.getLogger("LDSeg.DataIO")

MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("split", "image", "mask", "seed", "index")

Split = Literal["train", "test"]


class ManifestEntry(BaseModel):
    split: Split
    image: str
    mask: str
    seed: int = Field(ge=0)
    index: int = Field(ge=0)


class DatasetManifest(BaseModel):
    """Generated dataset description; paths are relative to `root`."""
    root: str
    generator_version: str
    size: int
    entries: List[ManifestEntry]

    @model_validator(mode="after")
    def _disjoint_splits(self) -> "DatasetManifest":
        seen: Dict[str, str] = {}
        for entry in self.entries:
            previous = seen.setdefault(entry.image, entry.split)
            if previous != entry.split:
                raise ValueError(f"sample {entry.image} appears in splits '{previous}' and '{entry.split}'")
        return self

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def count(self, name: str) -> int:
        return len(self.split(name))

    def to_tsv(self) -> str:
        lines = [f"# {self.generator_version}\tsize={self.size}", "\t".join(MANIFEST_COLUMNS)]
        for e in sorted(self.entries, key=lambda e: e.index):
            lines.append(f"{e.split}\t{e.image}\t{e.mask}\t{e.seed}\t{e.index}")
        return "\n".join(lines) + "\n"

    def write(self, path: PathLike) -> Path:
        return atomic_write(path, self.to_tsv().encode("utf-8"))

    @classmethod
    def read(cls, path: PathLike, check_files: bool = True) -> "DatasetManifest":
        """
        Parse a manifest file; `path` may be the TSV or its directory.

        Raises:
            FormatError: unreadable manifest, malformed rows, overlapping
                splits, or (with check_files) missing image/mask files
        """
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except (OSError, UnicodeDecodeError) as e:
            raise FormatError(f"cannot read manifest {path}: {e}") from e
        if len(lines) < 2 or not lines[0].startswith("# "):
            raise HeaderError(f"manifest {path}: missing generator version line")
        version, _, size_field = lines[0][2:].partition("\tsize=")
        if tuple(lines[1].split("\t")) != MANIFEST_COLUMNS:
            raise HeaderError(f"manifest {path}: expected columns {MANIFEST_COLUMNS}")

        try:
            entries = []
            for number, line in enumerate(lines[2:], start=3):
                fields = line.split("\t")
                if len(fields) != len(MANIFEST_COLUMNS):
                    raise HeaderError(f"manifest {path}:{number}: expected {len(MANIFEST_COLUMNS)} fields")
                entries.append(ManifestEntry(**dict(zip(MANIFEST_COLUMNS, fields))))
            manifest = cls(root=str(path.parent), generator_version=version, size=int(size_field), entries=entries)
        except (ValidationError, ValueError) as e:
            raise FormatError(f"manifest {path}: {e}") from e

        if check_files:
            for entry in manifest.entries:
                for rel in (entry.image, entry.mask):
                    if not (path.parent / rel).is_file():
                        raise FormatError(f"manifest {path}: missing file {rel}")
        return manifest


def assign_splits(n: int, test_fraction: float, rng: RngStream) -> List[str]:
    """Random train/test assignment of n indices (round(n * test_fraction) test samples)."""
    if not 0.0 <= test_fraction < 1.0:
        raise RangeError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    n_test = int(round(n * test_fraction))
    order = rng.permutation(n)
    splits = ["train"] * n
    for index in order[:n_test]:
        splits[int(index)] = "test"
    return splits


# ============ In-memory Data ============

@dataclass
class SegmentationData:
    images: np.ndarray  # (N, H, W) float32
    masks: np.ndarray  # (N, H, W) int64

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices) -> "SegmentationData":
        indices = np.asarray(indices, dtype=np.int64)
        return SegmentationData(self.images[indices], self.masks[indices])

    def batch_indices(self, batch_size: int, rng: RngStream = None) -> Iterator[np.ndarray]:
        """Index arrays of mini-batches, shuffled when an rng is given."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            yield order[start:start + batch_size]


def load_split(manifest: DatasetManifest, split: str, limit: int = None) -> SegmentationData:
    """Read every image/mask of one split into memory (ordered by sample index)."""
    entries = sorted(manifest.split(split), key=lambda e: e.index)
    if limit is not None:
        entries = entries[:limit]
    root = Path(manifest.root)
    if not entries:
        return SegmentationData(
            np.zeros((0, manifest.size, manifest.size), np.float32),
            np.zeros((0, manifest.size, manifest.size), np.int64),
        )
    images = np.stack([read_image(root / e.image) for e in entries])
    masks = np.stack([read_mask(root / e.mask) for e in entries])
    logger.debug(f"📂 Loaded {len(entries)} '{split}' samples from {root}")
    return SegmentationData(images, masks)


def train_val_split(data: SegmentationData, val_fraction: float, rng: RngStream) -> Tuple[SegmentationData, SegmentationData]:
    """Hold out round(N * val_fraction) samples for validation (at least one training sample stays)."""
    n = len(data)
    n_val = min(int(round(n * val_fraction)), max(n - 1, 0))
    order = rng.permutation(n)
    return data.subset(np.sort(order[n_val:])), data.subset(np.sort(order[:n_val]))
