# LDSeg Diffusion Package
from src.diffusion.schedule import NoiseSchedule, from_betas, make_cosine_schedule, make_linear_schedule, respace
from src.diffusion.kernels import (
    ddim_step,
    ddpm_step,
    evenly_spaced_subsequence,
    predict_m0,
    q_sample,
    q_step,
    validate_subsequence,
)

__all__ = [
    'NoiseSchedule', 'from_betas', 'make_cosine_schedule', 'make_linear_schedule', 'respace',
    'ddim_step', 'ddpm_step', 'evenly_spaced_subsequence', 'predict_m0', 'q_sample', 'q_step',
    'validate_subsequence',
]
