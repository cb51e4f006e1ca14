"""
LDSeg - Configuration Module
Loads environment variables (process settings) and defines the run
configuration schema read from TOML experiment files.
"""

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import ConfigError

# Load environment variables from .env file
load_dotenv()


class Config:
    """Process-level settings for LDSeg (environment driven)."""

    # Logging
    LOG_DIR: str = os.getenv("LDSEG_LOG_DIR", "logs")
    LOG_LEVEL: str = os.getenv("LDSEG_LOG_LEVEL", "INFO").upper()

    # Parallelism (dataset generation, uncertainty runs)
    WORKERS: int = int(os.getenv("LDSEG_WORKERS", "4"))

    # Progress bars
    PROGRESS: bool = os.getenv("LDSEG_PROGRESS", "true").lower() == "true"

    # File writes
    IO_RETRIES: int = int(os.getenv("LDSEG_IO_RETRIES", "3"))

    # Checkpoint directory convention
    CHECKPOINT_FILES = {
        "autoencoder": "autoencoder.ldsc",
        "denoiser": "denoiser.ldsc",
        "baseline": "baseline.ldsc",
    }

    @classmethod
    def validate(cls) -> list[str]:
        """Validate process settings; returns the names of invalid ones."""
        invalid = []
        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            invalid.append("LDSEG_LOG_LEVEL")
        if cls.WORKERS < 1:
            invalid.append("LDSEG_WORKERS")
        if cls.IO_RETRIES < 1:
            invalid.append("LDSEG_IO_RETRIES")
        return invalid


# ==================== Run Configuration (TOML) ====================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Section):
    """[data] synthetic dataset generation and splits."""
    n: int = Field(500, ge=1)
    size: int = Field(64, ge=8)
    seed: int = Field(0, ge=0)
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0)


class ModelConfig(_Section):
    """[model] architecture of the autoencoder, image encoder, denoiser and baseline."""
    image_size: int = Field(64, ge=2)
    depth: int = Field(4, ge=1)
    base_channels: int = Field(32, ge=1)
    channel_mults: Tuple[int, ...] = (1, 2, 2, 4)
    num_classes: int = Field(3, ge=2)
    latent_channels: Literal[1] = 1
    attention_heads: int = Field(4, ge=1)
    denoiser_base_channels: int = Field(32, ge=1)
    denoiser_mults: Tuple[int, ...] = (1, 2)
    time_dim: int = Field(128, ge=2)
    norm_groups: int = Field(8, ge=1)
    fusion: Literal["concat", "add"] = "concat"

    @model_validator(mode="after")
    def _check_geometry(self) -> "ModelConfig":
        if len(self.channel_mults) != self.depth:
            raise ValueError(f"channel_mults needs {self.depth} entries, got {len(self.channel_mults)}")
        if self.image_size % (2 ** self.depth):
            raise ValueError(f"image_size {self.image_size} not divisible by 2^{self.depth}")
        if not self.denoiser_mults:
            raise ValueError("denoiser_mults must not be empty")
        if self.latent_size % (2 ** (len(self.denoiser_mults) - 1)):
            raise ValueError(f"latent size {self.latent_size} too small for {len(self.denoiser_mults)} denoiser levels")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        if self.bottleneck_channels % self.attention_heads:
            raise ValueError(
                f"{self.bottleneck_channels} attention channels not divisible by {self.attention_heads} heads"
            )
        return self

    @property
    def latent_size(self) -> int:
        return self.image_size // (2 ** self.depth)

    @property
    def bottleneck_channels(self) -> int:
        """Channel width of the denoiser's lowest-resolution (attention) level."""
        return self.denoiser_base_channels * self.denoiser_mults[-1]

    def resized(self, image_size: int) -> "ModelConfig":
        """Same architecture at another image size."""
        return ModelConfig.model_validate({**self.model_dump(), "image_size": image_size})


class TrainConfig(_Section):
    """[train] optimisation, noise schedule and ablation variant."""
    ae_epochs: int = Field(100, ge=0)
    cd_epochs: int = Field(300, ge=0)
    baseline_epochs: int = Field(100, ge=0)
    batch_size: int = Field(4, ge=1)
    ae_lr: float = Field(1e-2, gt=0.0)
    cd_lr: float = Field(1e-3, gt=0.0)
    baseline_lr: float = Field(1e-3, gt=0.0)
    lr_decay: float = Field(0.999, gt=0.0, le=1.0)
    timesteps: int = Field(1000, ge=1)
    schedule: Literal["linear", "cosine"] = "cosine"
    beta_start: float = Field(1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(0.02, gt=0.0, lt=1.0)
    cosine_offset: float = Field(0.008, gt=0.0)
    seed: int = Field(0, ge=0)
    mask_path: Literal["autoencoder", "nearest-downsample"] = "autoencoder"
    image_path: Literal["encoder", "nearest-downsample"] = "encoder"
    full_resolution: bool = False

    @property
    def variant(self):
        from src.pipeline.variants import VariantSpec
        return VariantSpec(mask_path=self.mask_path, image_path=self.image_path, full_resolution=self.full_resolution)

    def make_schedule(self):
        """Noise schedule selected by this section."""
        from src.diffusion.schedule import make_cosine_schedule, make_linear_schedule
        if self.schedule == "cosine":
            return make_cosine_schedule(self.timesteps, self.cosine_offset)
        return make_linear_schedule(self.timesteps, self.beta_start, self.beta_end)


class SampleConfig(_Section):
    """[sample] reverse process settings."""
    steps: int = Field(1000, ge=1)
    sampler: Literal["ddpm", "ddim"] = "ddpm"
    seed: int = Field(0, ge=0)
    runs: int = Field(100, ge=1)
    workers: Optional[int] = Field(None, ge=1)


class BenchConfig(_Section):
    """[bench] benchmark sweeps."""
    k_list: List[int] = [2, 5, 10, 25, 50, 1000]
    samplers: List[Literal["ddpm", "ddim"]] = ["ddpm", "ddim"]
    sizes: List[int] = [64, 96, 128, 192, 256]
    sigmas: List[float] = [0.0, 0.05, 0.1, 0.15, 0.2]
    fixed_k: int = Field(50, ge=1)
    repeats: int = Field(5, ge=1)
    warmup: int = Field(1, ge=0)
    min_k_tolerance: float = Field(0.005, ge=0.0)
    test_samples: int = Field(100, ge=1)


class RunConfig(_Section):
    """Complete experiment configuration ([data], [model], [train], [sample], [bench])."""
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    sample: SampleConfig = SampleConfig()
    bench: BenchConfig = BenchConfig()


def _describe_validation_error(err: ValidationError) -> str:
    """Render pydantic errors naming the offending dotted keys."""
    parts = []
    for item in err.errors():
        key = ".".join(str(p) for p in item.get("loc", ()))
        if item.get("type") == "extra_forbidden":
            parts.append(f"unknown key '{key}'")
        else:
            parts.append(f"{key or '<root>'}: {item.get('msg')}")
    return "; ".join(parts)


def _apply_override(tree: dict, dotted_key: str, value: Any) -> None:
    section, _, key = dotted_key.partition(".")
    if not key:
        raise ConfigError(f"override '{dotted_key}' must be of the form section.key")
    tree.setdefault(section, {})[key] = value


def load_run_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> RunConfig:
    """
    Load a RunConfig from a TOML file and apply flag overrides (flags win).

    Args:
        path: TOML file, or None for defaults only
        overrides: mapping of "section.key" -> value; None values are skipped

    Raises:
        ConfigError: unreadable TOML, unknown keys, invalid values
    """
    tree: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                tree = tomllib.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML in {path}: {e}") from e

    for dotted_key, value in (overrides or {}).items():
        if value is not None:
            _apply_override(tree, dotted_key, value)

    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigError(_describe_validation_error(e)) from e
