# LDSeg Models Package
from src.models.autoencoder import MaskAutoencoder, autoencoder_loss, mask_decode, mask_encode, one_hot
from src.models.baseline import ResUnet, baseline_segment
from src.models.blocks import argmax_labels
from src.models.denoiser import ConditionalDenoiser, ImageEncoder, denoise_eps, denoiser_loss, image_encode

__all__ = [
    'MaskAutoencoder', 'autoencoder_loss', 'mask_decode', 'mask_encode', 'one_hot',
    'ResUnet', 'baseline_segment', 'argmax_labels',
    'ConditionalDenoiser', 'ImageEncoder', 'denoise_eps', 'denoiser_loss', 'image_encode',
]
