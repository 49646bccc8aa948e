"""DDPM schedule, conditioned U-Net denoiser, training objective and cascade."""

from .core import (DiffusionBatch, TextPipeline, TrainState, cascade_generate, check_cascade, denoise,
                   diffusion_loss, make_optimizer, make_train_state, null_text, sample, sample_captions,
                   sr_denoise, to_image_range, to_model_range, training_step)
from .schedule import NoiseSchedule, make_schedule, q_sample, q_sample_from, timestep_embedding
from .unet import Denoiser, DenoiserConfig, count_parameters

__all__ = [
    "DiffusionBatch", "TextPipeline", "TrainState", "cascade_generate", "check_cascade", "denoise",
    "diffusion_loss", "make_optimizer", "make_train_state", "null_text", "sample", "sample_captions",
    "sr_denoise", "to_image_range", "to_model_range", "training_step",
    "NoiseSchedule", "make_schedule", "q_sample", "q_sample_from", "timestep_embedding",
    "Denoiser", "DenoiserConfig", "count_parameters",
]
