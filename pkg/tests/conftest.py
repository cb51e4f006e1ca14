"""
LDSeg - Shared Test Fixtures
Tiny configurations (16x16 images, 2 levels, base width 4) keep structural
tests fast; trained checkpoints are produced once per session.
"""

import numpy as np
import pytest

from src.config import Config, DataConfig, ModelConfig, RunConfig, TrainConfig
from src.dataio.checkpoint import save_checkpoint
from src.dataio.dataset import DatasetManifest, load_split
from src.dataio.synthetic import generate_dataset
from src.pipeline.training import train_autoencoder, train_baseline, train_denoiser

TINY_TOML = """
[data]
n = 10
size = 16
seed = 3
test_fraction = 0.2
val_fraction = 0.2

[model]
image_size = 16
depth = 2
base_channels = 4
channel_mults = [1, 2]
norm_groups = 2
attention_heads = 2
denoiser_base_channels = 4
denoiser_mults = [1, 2]
time_dim = 8

[train]
ae_epochs = 1
cd_epochs = 1
baseline_epochs = 1
batch_size = 4
timesteps = 10
schedule = "linear"
beta_end = 0.2

[sample]
steps = 10
runs = 2

[bench]
k_list = [2, 5, 10]
sizes = [16, 32]
sigmas = [0.0, 0.2]
fixed_k = 5
repeats = 1
warmup = 0
test_samples = 2
"""


@pytest.fixture(autouse=True)
def _quiet(monkeypatch, tmp_path):
    """No progress bars, logs under the test's temp dir."""
    monkeypatch.setattr(Config, "PROGRESS", False)
    monkeypatch.setattr(Config, "LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def tiny_model_cfg() -> ModelConfig:
    return ModelConfig(
        image_size=16,
        depth=2,
        base_channels=4,
        channel_mults=(1, 2),
        norm_groups=2,
        attention_heads=2,
        denoiser_base_channels=4,
        denoiser_mults=(1, 2),
        time_dim=8,
    )


@pytest.fixture
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(
        ae_epochs=1, cd_epochs=1, baseline_epochs=1, batch_size=4,
        timesteps=10, schedule="linear", beta_end=0.2,
    )


@pytest.fixture
def tiny_data_cfg() -> DataConfig:
    return DataConfig(n=10, size=16, seed=3, val_fraction=0.2)


@pytest.fixture
def tiny_toml(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML, encoding="utf-8")
    return path


@pytest.fixture
def tiny_run_cfg(tiny_toml) -> RunConfig:
    from src.config import load_run_config
    return load_run_config(tiny_toml)


@pytest.fixture
def tiny_dataset(tmp_path) -> DatasetManifest:
    return generate_dataset(10, 16, 3, tmp_path / "data", depth=2, test_fraction=0.2, workers=2)


@pytest.fixture(scope="session")
def trained_dir(tmp_path_factory):
    """Checkpoint directory with one-epoch autoencoder, denoiser and baseline on the tiny dataset."""
    root = tmp_path_factory.mktemp("trained")
    manifest = generate_dataset(10, 16, 3, root / "data", depth=2, test_fraction=0.2, workers=2)
    data = load_split(manifest, "train")
    model_cfg = ModelConfig(
        image_size=16, depth=2, base_channels=4, channel_mults=(1, 2), norm_groups=2,
        attention_heads=2, denoiser_base_channels=4, denoiser_mults=(1, 2), time_dim=8,
    )
    train_cfg = TrainConfig(
        ae_epochs=1, cd_epochs=1, baseline_epochs=1, batch_size=4,
        timesteps=10, schedule="linear", beta_end=0.2,
    )
    data_cfg = DataConfig(n=10, size=16, seed=3, val_fraction=0.2)
    ckpt_dir = root / "checkpoints"
    ae = train_autoencoder(data, model_cfg, train_cfg, data_cfg).checkpoint
    save_checkpoint(ckpt_dir / Config.CHECKPOINT_FILES["autoencoder"], ae)
    cd = train_denoiser(data, model_cfg, train_cfg, ae, data_cfg).checkpoint
    save_checkpoint(ckpt_dir / Config.CHECKPOINT_FILES["denoiser"], cd)
    base = train_baseline(data, model_cfg, train_cfg, data_cfg).checkpoint
    save_checkpoint(ckpt_dir / Config.CHECKPOINT_FILES["baseline"], base)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(0)
