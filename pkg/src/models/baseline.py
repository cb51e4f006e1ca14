"""
LDSeg - Res-Unet Baseline
Deterministic full-resolution segmenter with skip connections, trained with
the same cross-entropy as the mask autoencoder.
"""

from typing import List

import numpy as np

from src.config import ModelConfig
from src.models.blocks import (
    Conv2d,
    GroupNorm,
    ResBlock,
    Upsample,
    argmax_labels,
    as_batch,
    check_divisible,
    level_channels,
)
from src.numerics.params import ParamStore
from src.numerics.random import RngStream
from src.numerics.tensor import Tensor, concat, no_grad


class ResUnet:
    """Encoder/decoder over the image grid; each decoder level concatenates the matching encoder features."""

    def __init__(self, cfg: ModelConfig, rng: RngStream, store: ParamStore = None):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        chans = level_channels(cfg.base_channels, cfg.channel_mults)
        groups = cfg.norm_groups
        prefix = "baseline"

        self.stem = Conv2d(self.store, f"{prefix}.stem", rng.child(0), 1, chans[0])
        self.down_blocks: List[ResBlock] = []
        self.downsamples: List[Conv2d] = []
        cin = chans[0]
        for i, cout in enumerate(chans):
            self.down_blocks.append(ResBlock(self.store, f"{prefix}.down{i}.res", rng.child(1, i), cin, cout, groups))
            self.downsamples.append(Conv2d(self.store, f"{prefix}.down{i}.pool", rng.child(2, i), cout, cout, stride=2))
            cin = cout
        self.bottom = ResBlock(self.store, f"{prefix}.bottom", rng.child(3), cin, cin, groups)

        self.upsamples: List[Upsample] = []
        self.up_blocks: List[ResBlock] = []
        for i in reversed(range(cfg.depth)):
            self.upsamples.append(Upsample(self.store, f"{prefix}.up{i}.upsample", rng.child(4, i), cin, chans[i]))
            self.up_blocks.append(
                ResBlock(self.store, f"{prefix}.up{i}.res", rng.child(5, i), 2 * chans[i], chans[i], groups)
            )
            cin = chans[i]
        self.out_norm = GroupNorm(self.store, f"{prefix}.out_norm", cin, groups)
        self.out = Conv2d(self.store, f"{prefix}.out", rng.child(6), cin, cfg.num_classes, zero=True)

    @property
    def has_skip_connections(self) -> bool:
        """Decoder ResBlocks take twice their output width (features + skip)."""
        return all(block.cin == 2 * block.cout for block in self.up_blocks)

    def __call__(self, images) -> Tensor:
        """Images -> class probabilities (N, C, H, W)."""
        x = as_batch(images)
        check_divisible(x.shape, self.cfg.depth)
        h = self.stem(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h)
            skips.append(h)
            h = down(h)
        h = self.bottom(h)
        for up, block, skip in zip(self.upsamples, self.up_blocks, reversed(skips)):
            h = block(concat([up(h), skip], axis=1))
        return self.out(self.out_norm(h).silu()).softmax(axis=1)


def baseline_segment(images, model: ResUnet) -> np.ndarray:
    """One-shot per-pixel argmax segmentation (N, H, W)."""
    with no_grad():
        probs = model(images)
    return argmax_labels(probs.data)
