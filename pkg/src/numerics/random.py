"""
LDSeg - Random Streams
Reproducible, independent random streams keyed by (seed, stream id).

Stream ids used across the project:
    0 -> dataset generation (child stream per sample index)
    1 -> training (child stream per epoch)
    2 + r -> sampling run r
"""

from typing import Optional, Tuple, Union

import numpy as np

from src.errors import RangeError
from src.numerics.tensor import get_dtype

StreamKey = Union[int, Tuple[int, ...]]

DATA_STREAM = 0
TRAIN_STREAM = 1
SAMPLING_STREAM = 2


class RngStream:
    """Counter-based generator: same (seed, stream) -> same draws on every machine."""

    def __init__(self, seed: int, stream: StreamKey = 0):
        key = tuple(stream) if isinstance(stream, tuple) else (int(stream),)
        if seed < 0 or any(k < 0 for k in key):
            raise RangeError(f"seed and stream ids must be non-negative, got seed={seed} stream={key}")
        self.seed = int(seed)
        self.stream = key
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def child(self, *ids: int) -> "RngStream":
        """Independent sub-stream (e.g. one per sample index or epoch)."""
        return RngStream(self.seed, self.stream + tuple(int(i) for i in ids))

    def normal(self, shape, scale: float = 1.0, dtype=None) -> np.ndarray:
        dtype = dtype or get_dtype()
        draws = self._gen.standard_normal(size=shape, dtype=np.float64)
        return (draws * scale).astype(dtype)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high) (high exclusive)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, options, size: Optional[int] = None):
        return self._gen.choice(options, size=size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"
