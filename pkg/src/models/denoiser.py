"""
LDSeg - Image Encoder and Conditional Denoiser
The image encoder maps the source image to a single-channel embedding of
latent size; the denoiser predicts the noise in a corrupted mask latent
given that embedding and the timestep.
"""

import logging
from typing import Callable, List

import numpy as np

from src.config import ModelConfig
from src.diffusion.kernels import q_sample
from src.diffusion.schedule import NoiseSchedule
from src.errors import DimensionError
from src.models.blocks import (
    Conv2d,
    GroupNorm,
    Linear,
    ResBlock,
    ResEncoder,
    SelfAttention,
    Upsample,
    as_batch,
    level_channels,
)
from src.numerics.layers import time_embedding
from src.numerics.params import ParamStore
from src.numerics.random import RngStream
from src.numerics.tensor import Tensor, as_tensor, concat

logger = logging.getLogger("LDSeg.Models")


class ImageEncoder(ResEncoder):
    """Same architecture as the mask encoder on one intensity channel, no final normalization."""

    def __init__(self, store: ParamStore, prefix: str, rng: RngStream, cfg: ModelConfig):
        super().__init__(
            store, prefix, rng,
            in_channels=1,
            base=cfg.base_channels,
            mults=cfg.channel_mults,
            groups=cfg.norm_groups,
            final_norm=False,
        )


def image_encode(images, encoder: ImageEncoder) -> Tensor:
    """Image(s) scaled to [0, 1] -> embedding (N, 1, H/2^L, W/2^L)."""
    return encoder(as_batch(images))


class ConditionalDenoiser:
    """
    Unet eps-predictor on the latent grid.

    Input is [m_t || e] (fusion "concat", two channels) or m_t + e ("add").
    Down path: a time-conditioned ResBlock per level with stride-2 convs
    between levels; middle: ResBlock, self-attention, ResBlock at the lowest
    resolution; up path: skip concatenation + ResBlock per level.
    """

    def __init__(self, store: ParamStore, prefix: str, rng: RngStream, cfg: ModelConfig):
        self.cfg = cfg
        self.fusion = cfg.fusion
        chans = level_channels(cfg.denoiser_base_channels, cfg.denoiser_mults)
        groups = cfg.norm_groups
        temb_dim = 4 * cfg.denoiser_base_channels
        in_channels = 2 if cfg.fusion == "concat" else 1

        self.time_in = Linear(store, f"{prefix}.time_mlp.0", rng.child(0, 0), cfg.time_dim, temb_dim)
        self.time_out = Linear(store, f"{prefix}.time_mlp.1", rng.child(0, 1), temb_dim, temb_dim)
        self.stem = Conv2d(store, f"{prefix}.stem", rng.child(1), in_channels, chans[0])

        self.down_blocks: List[ResBlock] = []
        self.downsamples: List[Conv2d] = []
        cin = chans[0]
        for i, cout in enumerate(chans):
            self.down_blocks.append(ResBlock(store, f"{prefix}.down{i}.res", rng.child(2, i), cin, cout, groups, temb_dim))
            if i < len(chans) - 1:
                self.downsamples.append(Conv2d(store, f"{prefix}.down{i}.pool", rng.child(3, i), cout, cout, stride=2))
            cin = cout

        self.mid1 = ResBlock(store, f"{prefix}.mid.res1", rng.child(4, 0), cin, cin, groups, temb_dim)
        self.attention = SelfAttention(store, f"{prefix}.mid.attn", rng.child(4, 1), cin, cfg.attention_heads)
        self.mid2 = ResBlock(store, f"{prefix}.mid.res2", rng.child(4, 2), cin, cin, groups, temb_dim)

        self.up_blocks: List[ResBlock] = []
        self.upsamples: List[Upsample] = []
        for i in reversed(range(len(chans))):
            self.up_blocks.append(
                ResBlock(store, f"{prefix}.up{i}.res", rng.child(5, i), cin + chans[i], chans[i], groups, temb_dim)
            )
            cin = chans[i]
            if i > 0:
                self.upsamples.append(Upsample(store, f"{prefix}.up{i}.upsample", rng.child(6, i), cin, cin))

        self.out_norm = GroupNorm(store, f"{prefix}.out_norm", cin, groups)
        self.out = Conv2d(store, f"{prefix}.out", rng.child(7), cin, cfg.latent_channels)

    def time_features(self, t, batch: int) -> Tensor:
        steps = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        emb = time_embedding(steps, self.cfg.time_dim)
        return self.time_out(self.time_in(emb).silu())

    def __call__(self, mt: Tensor, e: Tensor, t) -> Tensor:
        mt, e = as_tensor(mt), as_tensor(e)
        if mt.shape[0] != e.shape[0] or mt.shape[2:] != e.shape[2:]:
            raise DimensionError(f"latent {mt.shape} and embedding {e.shape} differ in batch or spatial shape")
        x = concat([mt, e], axis=1) if self.fusion == "concat" else mt + e
        temb = self.time_features(t, mt.shape[0])

        h = self.stem(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, temb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)

        h = self.mid2(self.attention(self.mid1(h, temb)), temb)

        for j, (block, skip) in enumerate(zip(self.up_blocks, reversed(skips))):
            h = block(concat([h, skip], axis=1), temb)
            if j < len(self.upsamples):
                h = self.upsamples[j](h)
        return self.out(self.out_norm(h).silu())


def denoise_eps(mt, e, t, denoiser: ConditionalDenoiser) -> Tensor:
    """Predicted eps with the shape of mt."""
    mt = as_tensor(mt)
    if mt.ndim != 4:
        raise DimensionError(f"latent must be (N, C, h, w), got {mt.shape}")
    return denoiser(mt, e, t)


def denoiser_loss(
    m0: np.ndarray,
    images,
    t,
    eps: np.ndarray,
    sched: NoiseSchedule,
    embed: Callable[[object], Tensor],
    predict: Callable[[Tensor, Tensor, object], Tensor],
) -> Tensor:
    """
    Mean squared error between eps and predict(q_sample(m0, t, eps), embed(images), t).

    `embed` and `predict` are the image path and eps-network of the model
    being trained; gradients reach whatever parameters they record.
    """
    mt = q_sample(m0, t, eps, sched)
    pred = predict(Tensor(mt), embed(images), t)
    if pred.shape != np.shape(eps):
        raise DimensionError(f"prediction {pred.shape} does not match eps {np.shape(eps)}")
    diff = pred - Tensor(eps)
    return (diff * diff).mean()
