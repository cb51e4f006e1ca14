# LDSeg Pipeline Package
from src.pipeline.variants import (
    ALL_VARIANTS,
    SegmentationModel,
    VariantSpec,
    build_segmentation_model,
    labels_to_latent,
    latent_to_labels,
    load_segmentation_model,
    nearest_downsample,
)
from src.pipeline.training import (
    LossRecord,
    TrainingOutcome,
    load_autoencoder,
    load_baseline,
    sample_timesteps,
    train_autoencoder,
    train_baseline,
    train_denoiser,
    write_loss_csv,
)
from src.pipeline.sampling import resolve_steps, reverse_process, segment, segment_probabilities, segment_variant
from src.pipeline.uncertainty import UncertaintyResult, boundary_band_statistics, estimate_uncertainty

__all__ = [
    'ALL_VARIANTS', 'SegmentationModel', 'VariantSpec', 'build_segmentation_model',
    'labels_to_latent', 'latent_to_labels', 'load_segmentation_model', 'nearest_downsample',
    'LossRecord', 'TrainingOutcome', 'load_autoencoder', 'load_baseline', 'sample_timesteps',
    'train_autoencoder', 'train_baseline', 'train_denoiser', 'write_loss_csv',
    'resolve_steps', 'reverse_process', 'segment', 'segment_probabilities', 'segment_variant',
    'UncertaintyResult', 'boundary_band_statistics', 'estimate_uncertainty',
]
