"""
LDSeg - Training Procedures
Mask autoencoder, conditional denoiser (+ image encoder) and Res-Unet
baseline training. All three share one loop: shuffled mini-batches,
adaptive-moment updates with per-epoch exponential learning-rate decay,
a held-out validation loss per epoch and best-validation parameter keeping.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.config import Config, DataConfig, ModelConfig, TrainConfig
from src.dataio.checkpoint import Checkpoint
from src.dataio.dataset import SegmentationData, train_val_split
from src.dataio.formats import PathLike, atomic_write
from src.diffusion.schedule import NoiseSchedule
from src.errors import CheckpointError, DivergenceError, NonFiniteError, RangeError
from src.models.autoencoder import MaskAutoencoder, autoencoder_loss, mask_encode
from src.models.baseline import ResUnet
from src.models.denoiser import denoiser_loss
from src.numerics.params import ParamStore, sgd_adam_step
from src.numerics.random import TRAIN_STREAM, RngStream
from src.numerics.tensor import Tensor, backward, no_grad
from src.pipeline.variants import (
    AE_FIELDS,
    AUTOENCODER_INIT,
    BASELINE_INIT,
    SegmentationModel,
    VariantSpec,
    build_segmentation_model,
    init_rng,
)

logger = logging.getLogger("LDSeg.Train")

# Sub-stream keys under the training stream (INIT_KEY = 0 lives in variants)
EPOCH_KEY = 1
VAL_SPLIT_KEY = 2
VAL_NOISE_KEY = 3

LOSS_COLUMNS = ["epoch", "step", "loss", "lr"]

LossFn = Callable[[np.ndarray, RngStream], Tensor]


@dataclass
class LossRecord:
    epoch: int
    step: int
    loss: float
    lr: float


@dataclass
class FitResult:
    records: List[LossRecord] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    best_val_loss: float = math.inf
    best_epoch: int = -1
    epochs_done: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else math.nan


@dataclass
class TrainingSnapshot:
    """Parameters together with the optimizer moments and step counter that produced them."""
    params: Dict[str, np.ndarray]
    moments: Dict[str, np.ndarray]
    step_count: int

    @classmethod
    def of(cls, store: ParamStore) -> "TrainingSnapshot":
        return cls(store.state_dict(), store.moment_state(), store.step_count)

    def restore(self, store: ParamStore) -> None:
        store.load_state_dict(self.params)
        store.load_moment_state(self.moments, self.step_count)


@dataclass
class TrainingOutcome:
    """Checkpoint plus the loss history that produced it."""
    checkpoint: Checkpoint
    fit: FitResult

    def write_losses(self, path: PathLike):
        return write_loss_csv(path, self.fit.records)


def write_loss_csv(path: PathLike, records: List[LossRecord]):
    """Per-step loss log with columns epoch, step, loss, lr."""
    frame = pd.DataFrame([vars(r) for r in records], columns=LOSS_COLUMNS)
    return atomic_write(path, frame.to_csv(index=False).encode("utf-8"))


def sample_timesteps(rng: RngStream, n: int, T: int) -> np.ndarray:
    """n draws from Uniform{1, ..., T}."""
    if T < 1:
        raise RangeError(f"T must be >= 1, got {T}")
    return rng.integers(1, T + 1, size=n).astype(np.int64)


# ============ Generic Loop ============

def _checked(loss: Tensor, what: str) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(f"{what} loss became non-finite ({value})")
    return value


def _fit(
    what: str,
    store: ParamStore,
    loss_fn: LossFn,
    train: SegmentationData,
    n_val: int,
    epochs: int,
    lr0: float,
    decay: float,
    batch_size: int,
    seed: int,
    start_epoch: int = 0,
    resumed_best: Optional[Tuple[float, int]] = None,
) -> Tuple[FitResult, Optional[TrainingSnapshot]]:
    """
    Run epochs [start_epoch, epochs) and return (FitResult, snapshot at the best validation loss).

    The snapshot holds the parameters and optimizer state of one and the same step.
    `resumed_best` is the (loss, epoch) pair a resumed checkpoint was saved at.

    loss_fn(indices, rng) computes the loss of a mini-batch; negative indices
    address the validation set (-1 - i is validation sample i).
    """
    root = RngStream(seed, TRAIN_STREAM)
    result = FitResult(epochs_done=start_epoch)
    best: Optional[TrainingSnapshot] = None
    if resumed_best is not None:
        result.best_val_loss, result.best_epoch = resumed_best
        best = TrainingSnapshot.of(store)
    val_indices = -1 - np.arange(n_val)

    for epoch in tqdm(range(start_epoch, epochs), desc=what, disable=not Config.PROGRESS):
        lr = lr0 * decay ** epoch
        rng = root.child(EPOCH_KEY, epoch)
        losses = []
        for indices in train.batch_indices(batch_size, rng):
            store.zero_grads()
            try:
                loss = loss_fn(indices, rng)
                value = _checked(loss, what)
                backward(loss, store.tensors())
            except NonFiniteError as e:
                raise DivergenceError(f"{what}: {e}") from e
            sgd_adam_step(store, lr)
            losses.append(value)
            result.records.append(LossRecord(epoch=epoch, step=store.step_count, loss=value, lr=lr))

        mean_loss = float(np.mean(losses))
        if n_val:
            try:
                with no_grad():
                    val_loss = _checked(loss_fn(val_indices, root.child(VAL_NOISE_KEY)), f"{what} validation")
            except NonFiniteError as e:
                raise DivergenceError(f"{what} validation: {e}") from e
        else:
            val_loss = mean_loss
        result.epoch_losses.append(mean_loss)
        result.val_losses.append(val_loss)
        result.epochs_done = epoch + 1
        if val_loss <= result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best = TrainingSnapshot.of(store)
        logger.info(f"📉 {what} epoch {epoch + 1}/{epochs}: loss={mean_loss:.5f} val={val_loss:.5f} lr={lr:.3g}")
    return result, best


def _split(data: SegmentationData, data_cfg: DataConfig, seed: int):
    if len(data) == 0:
        raise RangeError("training set is empty")
    return train_val_split(data, data_cfg.val_fraction, RngStream(seed, TRAIN_STREAM).child(VAL_SPLIT_KEY))


def _pick(train: SegmentationData, val: SegmentationData, indices: np.ndarray) -> SegmentationData:
    if indices.size and indices[0] < 0:
        return val.subset(-1 - indices)
    return train.subset(indices)


def _resume_state(store: ParamStore, resume: Optional[Checkpoint], kind: str, model: dict, variant: Optional[dict]) -> int:
    """Restore parameters and optimizer moments; returns the number of epochs already done."""
    if resume is None:
        return 0
    resume.require(kind, variant)
    if resume.model != model:
        raise CheckpointError(f"cannot resume {kind}: checkpoint was trained with another architecture")
    store.load_state_dict(resume.params)
    store.load_moment_state(resume.moments, resume.step_count)
    done = int(resume.metadata.get("epochs_done", 0))
    logger.info(f"⏩ Resuming {kind} at epoch {done}, step {store.step_count}")
    return done


def _resumed_best(resume: Optional[Checkpoint]) -> Optional[Tuple[float, int]]:
    if resume is None:
        return None
    value = resume.metadata.get("best_val_loss")
    if value is None:
        return None
    return float(value), int(resume.metadata.get("best_epoch", -1))


def _checkpoint(
    kind: str,
    store: ParamStore,
    best: Optional[TrainingSnapshot],
    fit: FitResult,
    model: dict,
    seed: int,
    epochs: int,
    schedule: Optional[NoiseSchedule] = None,
    variant: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> Checkpoint:
    if best is not None:
        best.restore(store)
    metadata = {
        "seed": seed,
        "epochs": epochs,
        "epochs_done": fit.epochs_done,
        "final_loss": fit.final_loss if fit.epoch_losses else None,
        "best_val_loss": fit.best_val_loss if math.isfinite(fit.best_val_loss) else None,
        "best_epoch": fit.best_epoch,
        "step_count": store.step_count,
        **(extra or {}),
    }
    return Checkpoint(
        kind=kind,
        model=model,
        params=store.state_dict(),
        schedule=schedule,
        variant=variant,
        metadata=metadata,
        moments=store.moment_state(),
    )


# ============ Mask Autoencoder ============

def train_autoencoder(
    data: SegmentationData,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    data_cfg: DataConfig = DataConfig(),
    resume: Optional[Checkpoint] = None,
) -> TrainingOutcome:
    """
    Fit the mask autoencoder on the label maps of `data` with cross-entropy.

    Raises:
        DivergenceError: the loss became non-finite
        CheckpointError: `resume` does not match this architecture
    """
    seed = train_cfg.seed
    model = model_cfg.model_dump(mode="json")
    ae = MaskAutoencoder(model_cfg, init_rng(seed, AUTOENCODER_INIT))
    start = _resume_state(ae.store, resume, "autoencoder", model, None)
    train, val = _split(data, data_cfg, seed)
    logger.info(f"🧠 Training mask autoencoder: {len(train)} train / {len(val)} val, {train_cfg.ae_epochs} epochs")

    def loss_fn(indices, _rng):
        masks = _pick(train, val, indices).masks
        probs = ae.decoder(mask_encode(masks, ae))
        return autoencoder_loss(probs, masks)

    fit, best = _fit(
        "autoencoder", ae.store, loss_fn, train, len(val),
        train_cfg.ae_epochs, train_cfg.ae_lr, train_cfg.lr_decay, train_cfg.batch_size, seed, start, _resumed_best(resume),
    )
    ckpt = _checkpoint("autoencoder", ae.store, best, fit, model, seed, train_cfg.ae_epochs)
    return TrainingOutcome(ckpt, fit)


# ============ Conditional Denoiser ============

def train_denoiser(
    data: SegmentationData,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    ae_ckpt: Optional[Checkpoint] = None,
    data_cfg: DataConfig = DataConfig(),
    resume: Optional[Checkpoint] = None,
    variant: Optional[VariantSpec] = None,
) -> TrainingOutcome:
    """
    Train the eps-predictor (and the image encoder when the variant has one):
    m0 from the frozen mask path, t ~ Uniform{1..T}, eps ~ N(0, I), one
    gradient step on the noise-prediction MSE per mini-batch.

    Raises:
        CheckpointError: the variant needs an autoencoder and none (or a
            mismatched one) was given, or `resume` does not match
        DivergenceError: the loss became non-finite
    """
    seed = train_cfg.seed
    variant = variant or train_cfg.variant
    schedule = train_cfg.make_schedule()
    model = model_cfg.model_dump(mode="json")

    autoencoder = None
    if variant.uses_autoencoder:
        if ae_ckpt is None:
            raise CheckpointError(f"variant {variant.name} needs a trained autoencoder checkpoint")
        ae_ckpt.require("autoencoder")
        ae_cfg = ModelConfig.model_validate(ae_ckpt.model)
        if any(getattr(ae_cfg, f) != getattr(model_cfg, f) for f in AE_FIELDS):
            raise CheckpointError("autoencoder checkpoint was trained with another architecture")
        autoencoder = MaskAutoencoder(model_cfg, init_rng(seed, AUTOENCODER_INIT))
        autoencoder.store.load_state_dict(ae_ckpt.params)
        autoencoder.store.freeze()

    bundle: SegmentationModel = build_segmentation_model(model_cfg, variant, schedule, seed, autoencoder)
    store = bundle.denoiser_store
    start = _resume_state(store, resume, "denoiser", model, variant.model_dump())
    train, val = _split(data, data_cfg, seed)

    m0_train = bundle.encode_masks(train.masks)
    m0_val = bundle.encode_masks(val.masks) if len(val) else m0_train[:0]
    logger.info(
        f"🧠 Training denoiser {variant.name}: {len(train)} train / {len(val)} val, "
        f"T={schedule.T} ({schedule.kind}), latent {m0_train.shape[2]}x{m0_train.shape[3]}"
    )

    def loss_fn(indices, rng):
        batch = _pick(train, val, indices)
        m0 = m0_val[-1 - indices] if indices.size and indices[0] < 0 else m0_train[indices]
        t = sample_timesteps(rng, len(indices), schedule.T)
        eps = rng.normal(m0.shape)
        return denoiser_loss(m0, batch.images, t, eps, schedule, bundle.embed, bundle.predict_eps)

    fit, best = _fit(
        f"denoiser {variant.name}", store, loss_fn, train, len(val),
        train_cfg.cd_epochs, train_cfg.cd_lr, train_cfg.lr_decay, train_cfg.batch_size, seed, start, _resumed_best(resume),
    )
    extra = {"autoencoder_fingerprint": autoencoder.store.fingerprint() if autoencoder is not None else None}
    ckpt = _checkpoint(
        "denoiser", store, best, fit, model, seed, train_cfg.cd_epochs,
        schedule=schedule, variant=variant.model_dump(), extra=extra,
    )
    return TrainingOutcome(ckpt, fit)


# ============ Res-Unet Baseline ============

def train_baseline(
    data: SegmentationData,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    data_cfg: DataConfig = DataConfig(),
    resume: Optional[Checkpoint] = None,
) -> TrainingOutcome:
    """Fit the deterministic Res-Unet baseline with pixel-averaged cross-entropy."""
    seed = train_cfg.seed
    model = model_cfg.model_dump(mode="json")
    net = ResUnet(model_cfg, init_rng(seed, BASELINE_INIT))
    start = _resume_state(net.store, resume, "baseline", model, None)
    train, val = _split(data, data_cfg, seed)
    logger.info(f"🧠 Training Res-Unet baseline: {len(train)} train / {len(val)} val, {train_cfg.baseline_epochs} epochs")

    def loss_fn(indices, _rng):
        batch = _pick(train, val, indices)
        return autoencoder_loss(net(batch.images), batch.masks)

    fit, best = _fit(
        "baseline", net.store, loss_fn, train, len(val),
        train_cfg.baseline_epochs, train_cfg.baseline_lr, train_cfg.lr_decay, train_cfg.batch_size, seed, start, _resumed_best(resume),
    )
    ckpt = _checkpoint("baseline", net.store, best, fit, model, seed, train_cfg.baseline_epochs)
    return TrainingOutcome(ckpt, fit)


def load_baseline(ckpt: Checkpoint) -> ResUnet:
    ckpt.require("baseline")
    cfg = ModelConfig.model_validate(ckpt.model)
    net = ResUnet(cfg, init_rng(0, BASELINE_INIT))
    net.store.load_state_dict(ckpt.params)
    return net


def load_autoencoder(ckpt: Checkpoint) -> MaskAutoencoder:
    ckpt.require("autoencoder")
    cfg = ModelConfig.model_validate(ckpt.model)
    ae = MaskAutoencoder(cfg, init_rng(0, AUTOENCODER_INIT))
    ae.store.load_state_dict(ckpt.params)
    return ae
