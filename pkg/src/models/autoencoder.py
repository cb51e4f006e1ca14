"""
LDSeg - Mask Autoencoder
Encoder (one-hot label map -> layer-normalized single-channel latent) and
decoder (latent -> per-pixel class probabilities), without skip connections.
"""

import logging
from typing import Tuple

import numpy as np

from src.config import ModelConfig
from src.errors import DimensionError, RangeError
from src.models.blocks import (
    Conv2d,
    GroupNorm,
    ResBlock,
    ResEncoder,
    Upsample,
    argmax_labels,
    level_channels,
)
from src.numerics.params import ParamStore
from src.numerics.random import RngStream
from src.numerics.tensor import Tensor, as_tensor

logger = logging.getLogger("LDSeg.Models")

LOG_FLOOR = 1e-12


def one_hot(labels, num_classes: int) -> np.ndarray:
    """(N, H, W) integer labels -> (N, C, H, W) float one-hot."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.ndim != 3:
        raise DimensionError(f"label maps must be (H, W) or (N, H, W), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise RangeError(f"labels must lie in [0, {num_classes - 1}]")
    eye = np.eye(num_classes, dtype=np.float64)
    return np.ascontiguousarray(eye[labels.astype(np.int64)].transpose(0, 3, 1, 2))


class MaskDecoder:
    """
    Latent -> class probabilities: input conv, then per level a nearest x2
    up-sampling conv and a ResBlock, and a zero-initialised output conv so an
    untrained decoder predicts the uniform distribution.
    """

    def __init__(self, store: ParamStore, prefix: str, rng: RngStream, cfg: ModelConfig):
        chans = level_channels(cfg.base_channels, cfg.channel_mults)
        groups = cfg.norm_groups
        self.prefix = prefix
        self.layers = [("conv", f"{prefix}.stem")]
        self.stem = Conv2d(store, f"{prefix}.stem", rng.child(0), cfg.latent_channels, chans[-1])
        self.bottom = ResBlock(store, f"{prefix}.bottom", rng.child(1), chans[-1], chans[-1], groups)
        self.ups, self.blocks = [], []
        cin = chans[-1]
        for i in reversed(range(cfg.depth)):
            cout = chans[i]
            self.ups.append(Upsample(store, f"{prefix}.up{i}.upsample", rng.child(2, i), cin, cout))
            self.blocks.append(ResBlock(store, f"{prefix}.up{i}.res", rng.child(3, i), cout, cout, groups))
            self.layers += [("upsample", f"{prefix}.up{i}.upsample"), ("res", f"{prefix}.up{i}.res")]
            cin = cout
        self.out_norm = GroupNorm(store, f"{prefix}.out_norm", cin, groups)
        self.out = Conv2d(store, f"{prefix}.out", rng.child(4), cin, cfg.num_classes, zero=True)
        self.layers.append(("conv", f"{prefix}.out"))

    @property
    def has_skip_connections(self) -> bool:
        """True when a block reads more channels than its up-sampling produces, or a layer lives outside the decoder."""
        widened = any(block.cin != up.conv.cout for up, block in zip(self.ups, self.blocks))
        foreign = any(not name.startswith(f"{self.prefix}.") for _, name in self.layers)
        return widened or foreign

    def __call__(self, m: Tensor) -> Tensor:
        h = self.bottom(self.stem(m))
        for up, block in zip(self.ups, self.blocks):
            h = block(up(h))
        logits = self.out(self.out_norm(h).silu())
        return logits.softmax(axis=1)


class MaskAutoencoder:
    """Mask encoder + decoder sharing one ParamStore ("encoder.*", "decoder.*")."""

    def __init__(self, cfg: ModelConfig, rng: RngStream, store: ParamStore = None):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        self.encoder = ResEncoder(
            self.store, "encoder", rng.child(0),
            in_channels=cfg.num_classes,
            base=cfg.base_channels,
            mults=cfg.channel_mults,
            groups=cfg.norm_groups,
            final_norm=True,
        )
        self.decoder = MaskDecoder(self.store, "decoder", rng.child(1), cfg)
        logger.debug(f"🧩 Mask autoencoder: {len(self.store)} tensors, {self.store.num_values()} values")

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    @property
    def has_skip_connections(self) -> bool:
        return self.decoder.has_skip_connections


def mask_encode(labels, ae: MaskAutoencoder) -> Tensor:
    """Label map(s) -> latent (N, 1, H/2^L, W/2^L), per-sample mean 0 / variance 1."""
    return ae.encoder(Tensor(one_hot(labels, ae.num_classes)))


def mask_decode(m, ae: MaskAutoencoder) -> Tuple[Tensor, np.ndarray]:
    """Latent -> (probabilities (N, C, H, W), label map (N, H, W))."""
    m = as_tensor(m)
    if m.ndim != 4 or m.shape[1] != ae.cfg.latent_channels:
        raise DimensionError(f"latent must be (N, {ae.cfg.latent_channels}, h, w), got {m.shape}")
    probs = ae.decoder(m)
    return probs, argmax_labels(probs.data)


def autoencoder_loss(probs: Tensor, labels) -> Tensor:
    """Pixel-averaged multi-class cross-entropy with the log argument floored at 1e-12."""
    probs = as_tensor(probs)
    target = one_hot(labels, probs.shape[1])
    if target.shape != probs.shape:
        raise DimensionError(f"probabilities {probs.shape} do not match labels {target.shape}")
    log_p = probs.clamp_min(LOG_FLOOR).log()
    pixels = target.shape[0] * target.shape[2] * target.shape[3]
    return -(log_p * Tensor(target)).sum() * (1.0 / pixels)
