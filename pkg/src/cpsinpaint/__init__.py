"""Mask-conditioned rectified-flow video inpainting with circular position-shift inference."""
from cpsinpaint.codec import CodecConfig, decode, decoder_loss, encode, latent_shape, pad_to_grid
from cpsinpaint.cps import CircularSchedule, build_circular, cps_denoise, plan_windows, single_pass_denoise
from cpsinpaint.masks import apply_mask, dilate_holes, downsample_spatial, downsample_temporal, to_latent_mask

__version__ = "0.1.0"

__all__ = [
    "CircularSchedule",
    "CodecConfig",
    "apply_mask",
    "build_circular",
    "cps_denoise",
    "decode",
    "decoder_loss",
    "dilate_holes",
    "downsample_spatial",
    "downsample_temporal",
    "encode",
    "latent_shape",
    "pad_to_grid",
    "plan_windows",
    "single_pass_denoise",
    "to_latent_mask",
]
