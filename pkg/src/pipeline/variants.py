"""
LDSeg - Model Variants
VariantSpec selects how masks enter/leave the diffusion space (learned
autoencoder or nearest-neighbour down/up-sampling) and how the image
condition is produced (learned encoder or nearest-neighbour down-sampling).
SegmentationModel assembles the trained parts of one variant.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.config import Config, ModelConfig
from src.dataio.checkpoint import Checkpoint, load_checkpoint
from src.diffusion.schedule import NoiseSchedule
from src.errors import CheckpointError, DimensionError
from src.models.autoencoder import MaskAutoencoder, mask_decode, mask_encode, one_hot
from src.models.blocks import as_batch, check_divisible
from src.models.denoiser import ConditionalDenoiser, ImageEncoder, denoise_eps, image_encode
from src.numerics.params import ParamStore
from src.numerics.random import TRAIN_STREAM, RngStream
from src.numerics.tensor import Tensor, no_grad

logger = logging.getLogger("LDSeg.Variants")

# Parameter initialisation sub-streams under the training stream
INIT_KEY = 0
AUTOENCODER_INIT, DENOISER_INIT, BASELINE_INIT = 0, 1, 2

AE_FIELDS = ("image_size", "depth", "base_channels", "channel_mults", "num_classes", "norm_groups", "latent_channels")


def init_rng(seed: int, component: int) -> RngStream:
    return RngStream(seed, TRAIN_STREAM).child(INIT_KEY, component)


class VariantSpec(BaseModel):
    """
    (autoencoder, encoder) is the full model; the other combinations are the
    ablations named in `name`. `full_resolution` runs the down-sampling
    variant directly on the image grid (factor 1).
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    mask_path: str = "autoencoder"
    image_path: str = "encoder"
    full_resolution: bool = False

    @model_validator(mode="after")
    def _check(self) -> "VariantSpec":
        if self.mask_path not in ("autoencoder", "nearest-downsample"):
            raise ValueError(f"unknown mask_path '{self.mask_path}'")
        if self.image_path not in ("encoder", "nearest-downsample"):
            raise ValueError(f"unknown image_path '{self.image_path}'")
        if self.full_resolution and (self.uses_autoencoder or self.uses_image_encoder):
            raise ValueError("full_resolution needs both nearest-downsample paths")
        return self

    @property
    def uses_autoencoder(self) -> bool:
        return self.mask_path == "autoencoder"

    @property
    def uses_image_encoder(self) -> bool:
        return self.image_path == "encoder"

    @property
    def name(self) -> str:
        tags = []
        if not self.uses_autoencoder:
            tags.append("md")
        if not self.uses_image_encoder:
            tags.append("id")
        base = f"LDSeg_({','.join(tags)})" if tags else "LDSeg"
        return f"{base}@full" if self.full_resolution else base

    @classmethod
    def from_name(cls, name: str) -> "VariantSpec":
        full = name.endswith("@full")
        base = name[:-len("@full")] if full else name
        tags = set(base[len("LDSeg_("):-1].split(",")) if base.startswith("LDSeg_(") else set()
        if base != "LDSeg" and not tags <= {"md", "id"}:
            raise ValueError(f"unknown variant '{name}'")
        return cls(
            mask_path="nearest-downsample" if "md" in tags else "autoencoder",
            image_path="nearest-downsample" if "id" in tags else "encoder",
            full_resolution=full,
        )

    def factor(self, cfg: ModelConfig) -> int:
        """Spatial reduction between the image grid and the diffusion grid."""
        return 1 if self.full_resolution else 2 ** cfg.depth


ALL_VARIANTS = tuple(
    VariantSpec(mask_path=m, image_path=i)
    for m in ("autoencoder", "nearest-downsample")
    for i in ("encoder", "nearest-downsample")
)


# ============ Nearest-neighbour Paths ============

def nearest_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Keep one pixel per factor x factor cell (the cell centre) along the last two axes."""
    x = np.asarray(x)
    check_divisible(x.shape, int(np.log2(factor)) if factor > 1 else 0)
    if factor == 1:
        return x.copy()
    offset = factor // 2
    return np.ascontiguousarray(x[..., offset::factor, offset::factor])


def labels_to_latent(labels, num_classes: int, factor: int) -> np.ndarray:
    """Mask down-sampler: labels (N, H, W) -> latent (N, 1, h, w) with values in [-1, 1]."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    small = nearest_downsample(labels, factor).astype(np.float64)
    return (2.0 * small / (num_classes - 1) - 1.0)[:, None].astype(np.float32)


def latent_to_labels(latent, num_classes: int, factor: int) -> np.ndarray:
    """Mask up-sampler: nearest class level per latent pixel, repeated factor x factor."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 4 or latent.shape[1] != 1:
        raise DimensionError(f"latent must be (N, 1, h, w), got {latent.shape}")
    levels = np.clip(np.round((latent[:, 0] + 1.0) * (num_classes - 1) / 2.0), 0, num_classes - 1)
    return levels.astype(np.int64).repeat(factor, axis=1).repeat(factor, axis=2)


def image_to_embedding(images, factor: int) -> np.ndarray:
    """Image down-sampler: (N, H, W) -> (N, 1, h, w)."""
    batch = as_batch(images).data
    return nearest_downsample(batch, factor).astype(np.float32)


# ============ Assembled Model ============

@dataclass
class SegmentationModel:
    """Trained parts of one variant, shared read-only by inference workers."""
    cfg: ModelConfig
    variant: VariantSpec
    schedule: NoiseSchedule
    denoiser: ConditionalDenoiser
    denoiser_store: ParamStore
    image_encoder: Optional[ImageEncoder] = None
    autoencoder: Optional[MaskAutoencoder] = None

    @property
    def factor(self) -> int:
        return self.variant.factor(self.cfg)

    @property
    def name(self) -> str:
        return self.variant.name

    def latent_shape(self, batch: int, image_shape: Tuple[int, int]) -> Tuple[int, int, int, int]:
        check_divisible(image_shape, int(np.log2(self.factor)) if self.factor > 1 else 0)
        return batch, self.cfg.latent_channels, image_shape[0] // self.factor, image_shape[1] // self.factor

    def encode_masks(self, labels) -> np.ndarray:
        """m0 for a batch of label maps (no gradient)."""
        if self.variant.uses_autoencoder:
            with no_grad():
                return mask_encode(labels, self.autoencoder).data.copy()
        return labels_to_latent(labels, self.cfg.num_classes, self.factor)

    def embed(self, images) -> Tensor:
        """Image condition; records gradients into the image encoder when grad is enabled."""
        if self.variant.uses_image_encoder:
            return image_encode(images, self.image_encoder)
        return Tensor(image_to_embedding(images, self.factor))

    def predict_eps(self, mt, e, t) -> Tensor:
        return denoise_eps(mt, e, t, self.denoiser)

    def decode(self, latent) -> Tuple[np.ndarray, np.ndarray]:
        """Latent -> (class probabilities (N, C, H, W), labels (N, H, W))."""
        if self.variant.uses_autoencoder:
            with no_grad():
                probs, labels = mask_decode(latent, self.autoencoder)
            return probs.data, labels
        labels = latent_to_labels(latent, self.cfg.num_classes, self.factor)
        return one_hot(labels, self.cfg.num_classes), labels

    def fingerprint(self) -> str:
        parts = [self.denoiser_store.fingerprint()]
        if self.autoencoder is not None:
            parts.append(self.autoencoder.store.fingerprint())
        return ":".join(parts)

    @classmethod
    def from_checkpoints(cls, denoiser_ckpt: Checkpoint, ae_ckpt: Optional[Checkpoint] = None) -> "SegmentationModel":
        """
        Rebuild a trained variant.

        Raises:
            CheckpointError: wrong kinds, missing autoencoder, mismatched
                architectures or a different autoencoder than the one used in training
        """
        denoiser_ckpt.require("denoiser")
        if denoiser_ckpt.schedule is None:
            raise CheckpointError("denoiser checkpoint has no noise schedule")
        cfg = ModelConfig.model_validate(denoiser_ckpt.model)
        variant = VariantSpec.model_validate(denoiser_ckpt.variant or {})
        model = build_segmentation_model(cfg, variant, denoiser_ckpt.schedule, seed=0)
        model.denoiser_store.load_state_dict(denoiser_ckpt.params)

        if variant.uses_autoencoder:
            if ae_ckpt is None:
                raise CheckpointError(f"variant {variant.name} needs an autoencoder checkpoint")
            ae_ckpt.require("autoencoder")
            ae_cfg = ModelConfig.model_validate(ae_ckpt.model)
            if any(getattr(ae_cfg, f) != getattr(cfg, f) for f in AE_FIELDS):
                raise CheckpointError("autoencoder and denoiser checkpoints were trained with different architectures")
            model.autoencoder.store.load_state_dict(ae_ckpt.params)
            expected = denoiser_ckpt.metadata.get("autoencoder_fingerprint")
            if expected and expected != model.autoencoder.store.fingerprint():
                raise CheckpointError("denoiser was trained against a different autoencoder checkpoint")
        logger.debug(f"🧩 Loaded {variant.name} ({cfg.image_size}x{cfg.image_size})")
        return model


def build_segmentation_model(
    cfg: ModelConfig,
    variant: VariantSpec,
    schedule: NoiseSchedule,
    seed: int = 0,
    autoencoder: Optional[MaskAutoencoder] = None,
) -> SegmentationModel:
    """Freshly initialised denoiser (+ image encoder) for a variant; the autoencoder may be supplied."""
    store = ParamStore()
    rng = init_rng(seed, DENOISER_INIT)
    image_encoder = ImageEncoder(store, "image_encoder", rng.child(0), cfg) if variant.uses_image_encoder else None
    denoiser = ConditionalDenoiser(store, "denoiser", rng.child(1), cfg)
    if variant.uses_autoencoder and autoencoder is None:
        autoencoder = MaskAutoencoder(cfg, init_rng(seed, AUTOENCODER_INIT))
    if not variant.uses_autoencoder:
        autoencoder = None
    return SegmentationModel(
        cfg=cfg,
        variant=variant,
        schedule=schedule,
        denoiser=denoiser,
        denoiser_store=store,
        image_encoder=image_encoder,
        autoencoder=autoencoder,
    )


def load_segmentation_model(ckpt_dir, denoiser_file: Optional[str] = None) -> SegmentationModel:
    """
    Rebuild a variant from a checkpoint directory (denoiser.ldsc, autoencoder.ldsc).

    Raises:
        CheckpointError: missing or incompatible checkpoint files
    """
    ckpt_dir = Path(ckpt_dir)
    denoiser = load_checkpoint(ckpt_dir / (denoiser_file or Config.CHECKPOINT_FILES["denoiser"]), kind="denoiser")
    variant = VariantSpec.model_validate(denoiser.variant or {})
    ae = None
    if variant.uses_autoencoder:
        ae = load_checkpoint(ckpt_dir / Config.CHECKPOINT_FILES["autoencoder"], kind="autoencoder")
    return SegmentationModel.from_checkpoints(denoiser, ae)
