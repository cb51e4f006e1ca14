"""
LDSeg - Configuration Tests
"""

import pytest

from src.config import Config, DataConfig, ModelConfig, RunConfig, TrainConfig, load_run_config
from src.errors import ConfigError


class TestConfig:
    """Test environment settings loading and validation."""

    def test_config_loads_defaults(self):
        """Test that Config exposes the documented process settings."""
        assert Config.LOG_LEVEL in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
        assert Config.WORKERS >= 1
        assert Config.IO_RETRIES >= 1

    def test_config_has_checkpoint_files(self):
        """Test that the checkpoint directory convention names all three models."""
        assert Config.CHECKPOINT_FILES == {
            "autoencoder": "autoencoder.ldsc",
            "denoiser": "denoiser.ldsc",
            "baseline": "baseline.ldsc",
        }

    def test_validate_reports_invalid_settings(self, monkeypatch):
        """Test validation lists bad environment values by variable name."""
        monkeypatch.setattr(Config, "LOG_LEVEL", "LOUD")
        monkeypatch.setattr(Config, "WORKERS", 0)

        invalid = Config.validate()
        assert "LDSEG_LOG_LEVEL" in invalid
        assert "LDSEG_WORKERS" in invalid
        assert "LDSEG_IO_RETRIES" not in invalid

    def test_validate_with_defaults(self, monkeypatch):
        """Test validation passes with valid settings."""
        monkeypatch.setattr(Config, "LOG_LEVEL", "INFO")
        monkeypatch.setattr(Config, "WORKERS", 4)
        monkeypatch.setattr(Config, "IO_RETRIES", 3)

        assert Config.validate() == []


class TestRunConfig:
    """Test TOML run configuration parsing."""

    def test_defaults(self):
        """Test that an empty file yields the documented defaults."""
        cfg = load_run_config(None)
        assert cfg.model.depth == 4
        assert cfg.model.channel_mults == (1, 2, 2, 4)
        assert cfg.train.timesteps == 1000
        assert cfg.train.schedule == "cosine"
        assert cfg.train.batch_size == 4
        assert cfg.sample.sampler == "ddpm"
        assert cfg.train.variant.name == "LDSeg"

    def test_unknown_key_is_named(self, tmp_path):
        """Test that a misspelled key is rejected with its dotted name."""
        path = tmp_path / "bad.toml"
        path.write_text("[train]\nlearning_rat = 0.1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="train.learning_rat"):
            load_run_config(path)

    def test_unknown_section_is_named(self, tmp_path):
        """Test that an unknown section is rejected."""
        path = tmp_path / "bad.toml"
        path.write_text("[optimizer]\nlr = 0.1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="optimizer"):
            load_run_config(path)

    def test_flags_override_file(self, tiny_toml):
        """Test that flag overrides win over file values and None is ignored."""
        cfg = load_run_config(tiny_toml, {"data.n": 42, "data.seed": None})
        assert cfg.data.n == 42
        assert cfg.data.seed == 3

    def test_invalid_toml(self, tmp_path):
        """Test that a syntax error becomes a ConfigError."""
        path = tmp_path / "broken.toml"
        path.write_text("[data\nn = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid TOML"):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        """Test that an unreadable file becomes a ConfigError."""
        with pytest.raises(ConfigError, match="cannot read"):
            load_run_config(tmp_path / "nope.toml")

    def test_invalid_value(self, tmp_path):
        """Test that out-of-range values are rejected."""
        path = tmp_path / "bad.toml"
        path.write_text("[train]\nbatch_size = 0\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="train.batch_size"):
            load_run_config(path)

    def test_bad_override_key(self):
        """Test that overrides need the section.key form."""
        with pytest.raises(ConfigError):
            load_run_config(None, {"seed": 1})

    def test_tiny_config(self, tiny_run_cfg, tiny_model_cfg):
        """Test that the shared tiny TOML matches the tiny model fixture."""
        assert isinstance(tiny_run_cfg, RunConfig)
        assert tiny_run_cfg.model == tiny_model_cfg
        assert tiny_run_cfg.model.latent_size == 4


class TestModelConfig:
    """Test architecture geometry checks."""

    def test_image_size_must_divide(self):
        """Test that the image size must be divisible by 2^depth."""
        with pytest.raises(ValueError):
            ModelConfig(image_size=60)

    def test_mults_match_depth(self):
        """Test that channel_mults needs one entry per level."""
        with pytest.raises(ValueError):
            ModelConfig(depth=3)

    def test_attention_heads_divide(self):
        """Test that attention heads must divide the bottleneck width."""
        with pytest.raises(ValueError):
            ModelConfig(attention_heads=3)

    def test_resized(self, tiny_model_cfg):
        """Test that resizing keeps the architecture."""
        bigger = tiny_model_cfg.resized(32)
        assert bigger.image_size == 32
        assert bigger.latent_size == 8
        assert bigger.base_channels == tiny_model_cfg.base_channels

    def test_latent_size(self):
        """Test the default 64x64 model has a 4x4 latent grid."""
        assert ModelConfig().latent_size == 4


class TestTrainConfig:
    """Test schedule and variant selection."""

    def test_cosine_schedule(self):
        """Test that the default section builds a cosine schedule of T steps."""
        sched = TrainConfig(timesteps=50).make_schedule()
        assert sched.kind == "cosine"
        assert sched.T == 50

    def test_linear_schedule(self):
        """Test the linear schedule endpoints."""
        sched = TrainConfig(timesteps=20, schedule="linear").make_schedule()
        assert sched.betas[1] == pytest.approx(1e-4)
        assert sched.betas[20] == pytest.approx(0.02)

    def test_variant_from_paths(self):
        """Test that mask/image paths select the ablation variant."""
        train = TrainConfig(mask_path="nearest-downsample", image_path="nearest-downsample")
        assert train.variant.name == "LDSeg_(md,id)"

    def test_data_fractions(self):
        """Test that split fractions must lie in range."""
        with pytest.raises(ValueError):
            DataConfig(test_fraction=1.0)
