"""
LDSeg - Training Nodes
Autoencoder, conditional denoiser and Res-Unet baseline training over a
dataset manifest, writing checkpoints and per-step loss CSVs.
"""

import logging
from pathlib import Path
from typing import Optional, Tuple

from src.config import Config, ModelConfig, RunConfig
from src.dataio.checkpoint import load_checkpoint, save_checkpoint
from src.dataio.dataset import DatasetManifest, SegmentationData, load_split
from src.dataio.formats import PathLike
from src.dataio.outputs import OutputDir
from src.errors import ConfigError
from src.nodes.common import failure, has_failed, output_dir, run_config
from src.pipeline.training import TrainingOutcome, train_autoencoder, train_baseline, train_denoiser
from src.state import ExperimentState

logger = logging.getLogger("LDSeg.Graph")

CHECKPOINT_SUBDIR = "checkpoints"
KINDS = ("autoencoder", "denoiser", "baseline")


def model_config_for(cfg: RunConfig, manifest: DatasetManifest) -> ModelConfig:
    """[model] section adapted to the dataset's image size."""
    if manifest.size == cfg.model.image_size:
        return cfg.model
    logger.info(f"📐 Using image_size={manifest.size} from the dataset (config says {cfg.model.image_size})")
    try:
        return cfg.model.resized(manifest.size)
    except ValueError as e:
        raise ConfigError(f"model does not fit {manifest.size}x{manifest.size} images: {e}") from e


def load_training_data(manifest_path: PathLike, split: str = "train") -> Tuple[DatasetManifest, SegmentationData]:
    manifest = DatasetManifest.read(manifest_path)
    return manifest, load_split(manifest, split)


def run_training(
    kind: str,
    cfg: RunConfig,
    manifest_path: PathLike,
    out: OutputDir,
    ae_checkpoint: Optional[PathLike] = None,
    resume: Optional[PathLike] = None,
) -> Path:
    """
    Train one model kind and write <kind>.ldsc plus <kind>_loss.csv under `out`.

    Raises:
        CheckpointError: missing/incompatible autoencoder or resume checkpoint
        DivergenceError: non-finite loss
        OutputExistsError: outputs exist (resuming may overwrite its own checkpoint)
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind '{kind}'")
    ckpt_path = out.claim(Config.CHECKPOINT_FILES[kind], overwrite=resume is not None)
    loss_path = out.claim(f"{kind}_loss.csv", overwrite=resume is not None)
    manifest, data = load_training_data(manifest_path)
    model_cfg = model_config_for(cfg, manifest)
    resume_ckpt = load_checkpoint(resume, kind=kind) if resume is not None else None

    if kind == "autoencoder":
        outcome: TrainingOutcome = train_autoencoder(data, model_cfg, cfg.train, cfg.data, resume_ckpt)
    elif kind == "denoiser":
        ae = load_checkpoint(ae_checkpoint, kind="autoencoder") if ae_checkpoint is not None else None
        outcome = train_denoiser(data, model_cfg, cfg.train, ae, cfg.data, resume_ckpt)
    else:
        outcome = train_baseline(data, model_cfg, cfg.train, cfg.data, resume_ckpt)

    save_checkpoint(ckpt_path, outcome.checkpoint)
    outcome.write_losses(loss_path)
    logger.info(f"✅ {kind} trained: final loss {outcome.fit.final_loss:.5f}, best val {outcome.fit.best_val_loss:.5f}")
    return ckpt_path


# ============ Graph Nodes ============

def _train_node(state: ExperimentState, kind: str, node: str, **kwargs) -> dict:
    if has_failed(state):
        return {"logs": [f"⏭️ {node} skipped after an earlier failure"]}
    logger.info(f"🧠 Training {kind}...")
    try:
        out = output_dir(state, f"train-{kind}", CHECKPOINT_SUBDIR)
        path = run_training(kind, run_config(state), state["manifest_path"], out, **kwargs)
    except Exception as e:
        return failure(node, e)
    return {
        f"{kind}_path": str(path),
        "produced_files": [str(p) for p in out.produced],
        "logs": [f"✅ {kind} checkpoint: {path}"],
    }


def train_ae_node(state: ExperimentState) -> dict:
    """Train the mask autoencoder (runs in parallel with the baseline)."""
    return _train_node(state, "autoencoder", "train_ae")


def train_cd_node(state: ExperimentState) -> dict:
    """Train the conditional denoiser against the freshly trained autoencoder."""
    if not state.get("autoencoder_path") and not has_failed(state):
        train = run_config(state).train
        if train.mask_path == "autoencoder":
            return failure("train_cd", ConfigError("no autoencoder checkpoint in state"))
    return _train_node(state, "denoiser", "train_cd", ae_checkpoint=state.get("autoencoder_path"))


def train_baseline_node(state: ExperimentState) -> dict:
    """Train the Res-Unet baseline."""
    return _train_node(state, "baseline", "train_baseline")
