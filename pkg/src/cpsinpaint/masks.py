"""Mask transforms from pixel keep-maps down to latent keep-maps and dilated hole maps.

Polarity: keep-maps hold 1 for known pixels and 0 for holes. Hole maps are the
inverse (1 = hole). Every reduction is conservative on the keep side: a cell is
known only if every pixel it covers is known.
"""
from __future__ import annotations

import numpy as np

from cpsinpaint import kernels
from cpsinpaint.codec import CodecConfig
from cpsinpaint.errors import ShapeError


def _as_binary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype != np.uint8:
        m = (m > 0.5).astype(np.uint8)
    return m


def apply_mask(video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero the hole pixels of ``video`` (T, H, W, C) with keep-map ``mask`` (T, H, W)."""
    if video.shape[:3] != mask.shape:
        raise ShapeError(f"video extents {video.shape[:3]} do not match mask {mask.shape}")
    return video * mask[..., None].astype(video.dtype)


def downsample_temporal(mask: np.ndarray, s_t: int) -> np.ndarray:
    """Intersect keep-maps over each causal group; frame 0 passes through on its own."""
    m = _as_binary(mask)
    T = m.shape[0]
    if T < 1 or (T - 1) % s_t:
        raise ShapeError(f"mask frames={T} is not 1 mod {s_t}", axis="frames")
    return kernels.temporal_group_min(m, s_t)


def downsample_spatial(mask: np.ndarray, s_h: int, s_w: int) -> np.ndarray:
    m = _as_binary(mask)
    _, H, W = m.shape
    if H % s_h:
        raise ShapeError(f"mask height={H} is not divisible by {s_h}", axis="height")
    if W % s_w:
        raise ShapeError(f"mask width={W} is not divisible by {s_w}", axis="width")
    return kernels.spatial_block_min(m, s_h, s_w)


def to_latent_mask(mask: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    return downsample_spatial(downsample_temporal(mask, cfg.s_t), cfg.s_h, cfg.s_w)


def dilate_holes(keep: np.ndarray, radius: int = 1) -> np.ndarray:
    """Hole map of ``keep`` grown by a (2r+1)^3 box over (t, h, w); radius 0 only inverts."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    hole = (1 - _as_binary(keep)).astype(np.uint8)
    return kernels.box_dilate(hole, radius)
