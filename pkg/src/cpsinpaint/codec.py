"""Analytic causal spatio-temporal codec.

Stands in for a pretrained 3-D causal VAE: pixel frame 0 forms latent frame 0
on its own, every following group of ``s_t`` frames forms one latent frame, and
each ``s_h x s_w`` patch is mean-pooled and mapped to ``c_lat`` channels by a
seeded orthonormal projection. Videos are ``(T, H, W, C)`` float arrays in
[0, 1]; latents are ``(t, h, w, c_lat)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from cpsinpaint import kernels
from cpsinpaint.errors import NumericError, ShapeError

# pixel value v is stored as (v - LATENT_SHIFT) * LATENT_SCALE before projection,
# so a mid-gray frame encodes to the zero latent
LATENT_SHIFT = 0.5
LATENT_SCALE = 2.0


@dataclass(frozen=True)
class CodecConfig:
    s_t: int = 8
    s_h: int = 32
    s_w: int = 32
    c_lat: int = 8
    channels: int = 3
    projection_seed: int = 0

    def __post_init__(self):
        for name in ("s_t", "s_h", "s_w", "c_lat", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @classmethod
    def toy(cls, **overrides) -> "CodecConfig":
        """Desk-scale factors (8, 4, 4) with 8 latent channels."""
        return cls(**{"s_h": 4, "s_w": 4, **overrides})


@dataclass(frozen=True)
class PadInfo:
    """Extents of a video before ``pad_to_grid``; used to crop after decoding."""

    frames: int
    height: int
    width: int

    def crop(self, video: np.ndarray) -> np.ndarray:
        return video[: self.frames, : self.height, : self.width]


def latent_shape(T: int, H: int, W: int, cfg: CodecConfig) -> tuple[int, int, int, int]:
    if T < 1 or (T - 1) % cfg.s_t:
        raise ShapeError(f"frames={T} is not 1 mod {cfg.s_t}", axis="frames")
    if H % cfg.s_h:
        raise ShapeError(f"height={H} is not divisible by {cfg.s_h}", axis="height")
    if W % cfg.s_w:
        raise ShapeError(f"width={W} is not divisible by {cfg.s_w}", axis="width")
    return 1 + (T - 1) // cfg.s_t, H // cfg.s_h, W // cfg.s_w, cfg.c_lat


def padded_extents(T: int, H: int, W: int, cfg: CodecConfig) -> tuple[int, int, int]:
    T2 = T + (-(T - 1)) % cfg.s_t
    return T2, H + (-H) % cfg.s_h, W + (-W) % cfg.s_w


def pad_to_grid(video: np.ndarray, cfg: CodecConfig) -> tuple[np.ndarray, PadInfo]:
    """Repeat the last frame and edge-replicate borders until the codec grid fits.

    Works for videos ``(T, H, W, C)`` and masks ``(T, H, W)`` alike.
    """
    T, H, W = video.shape[:3]
    T2, H2, W2 = padded_extents(T, H, W, cfg)
    pad = [(0, T2 - T), (0, H2 - H), (0, W2 - W)] + [(0, 0)] * (video.ndim - 3)
    if T2 == T and H2 == H and W2 == W:
        out = video.copy()
    else:
        out = np.pad(video, pad, mode="edge")
    return out, PadInfo(T, H, W)


@lru_cache(maxsize=32)
def projection(channels: int, c_lat: int, seed: int) -> np.ndarray:
    """Seeded ``(channels, c_lat)`` matrix with orthonormal rows (or columns when c_lat < channels)."""
    rng = np.random.default_rng(seed)
    big, small = max(channels, c_lat), min(channels, c_lat)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    q = q * np.sign(np.diag(r))
    p = q.T if channels <= c_lat else q
    p.setflags(write=False)
    return p


def _check_video(video: np.ndarray, cfg: CodecConfig) -> None:
    if video.ndim != 4:
        raise ShapeError(f"video must be (T, H, W, C), got shape {video.shape}", axis="ndim")
    if video.shape[3] != cfg.channels:
        raise ShapeError(f"expected {cfg.channels} channels, got {video.shape[3]}", axis="channels")
    latent_shape(*video.shape[:3], cfg)


def encode(video: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    _check_video(video, cfg)
    pooled = kernels.causal_pool(video, cfg.s_t, cfg.s_h, cfg.s_w)
    p = projection(cfg.channels, cfg.c_lat, cfg.projection_seed)
    return ((pooled - LATENT_SHIFT) * LATENT_SCALE) @ p


def decode(latent: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    """Inverse projection followed by nearest-neighbour upsampling to the causal pixel grid.

    The result is not clipped; callers that need [0, 1] clip themselves.
    """
    if latent.ndim != 4 or latent.shape[3] != cfg.c_lat:
        raise ShapeError(f"latent must be (t, h, w, {cfg.c_lat}), got {latent.shape}", axis="channels")
    p = projection(cfg.channels, cfg.c_lat, cfg.projection_seed)
    pix = (latent.astype(np.float64) @ p.T) / LATENT_SCALE + LATENT_SHIFT
    pix = pix.repeat(cfg.s_h, axis=1).repeat(cfg.s_w, axis=2)
    return np.concatenate([pix[:1], pix[1:].repeat(cfg.s_t, axis=0)], axis=0)


def gradient_l1(recon: np.ndarray, target: np.ndarray) -> float:
    """Perceptual stand-in: L1 distance between spatial finite-difference images."""
    total = 0.0
    for axis in (1, 2):
        if recon.shape[axis] > 1:
            total += float(np.mean(np.abs(np.diff(recon, axis=axis) - np.diff(target, axis=axis))))
    return total


def decoder_loss(
    recon: np.ndarray,
    target: np.ndarray,
    adv_score: float,
    perceptual: Callable[[np.ndarray, np.ndarray], float] = gradient_l1,
) -> float:
    """Decoder fine-tune objective: L1 + perceptual + 0.05 * adversarial."""
    if recon.shape != target.shape:
        raise ShapeError(f"recon {recon.shape} vs target {target.shape}")
    if not (np.isfinite(recon).all() and np.isfinite(target).all() and np.isfinite(adv_score)):
        raise NumericError("decoder_loss received non-finite input")
    p = float(perceptual(recon, target))
    if not np.isfinite(p) or p < 0:
        raise NumericError(f"perceptual term must be finite and >= 0, got {p}")
    l1 = float(np.mean(np.abs(recon.astype(np.float64) - target)))
    return l1 + p + 0.05 * float(adv_score)
