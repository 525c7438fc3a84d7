"""Quality metrics for inpainted videos: SSIM, PSNR, hole/known splits and a flicker proxy.

All inputs are ``(T, H, W, C)`` (or single ``(H, W, C)`` / ``(H, W)`` frames) in [0, 1];
masks use the keep convention (1 = known pixel, 0 = hole).
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from cpsinpaint import kernels
from cpsinpaint.errors import ShapeError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0
PSNR_CAP = 100.0  # reported for identical inputs instead of +inf


def gaussian_kernel(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"extent mismatch: {a.shape} vs {b.shape}")


def _planes(x: np.ndarray, frame_ndim: int) -> np.ndarray:
    """Stack of 2-D planes ``(N, H, W)``; channels (if any) become extra planes."""
    x = np.asarray(x, dtype=np.float64)
    if frame_ndim == 2:
        return x.reshape((-1,) + x.shape[-2:])
    return np.moveaxis(x, -1, -3).reshape((-1,) + x.shape[-3:-1])


def ssim_map(a: np.ndarray, b: np.ndarray, frame_ndim: int = 3) -> np.ndarray:
    """Per-pixel SSIM, channel-averaged; output drops the channel axis.

    ``frame_ndim`` is 3 for ``(..., H, W, C)`` inputs and 2 for ``(..., H, W)``.
    Borders are filtered with symmetric reflection.
    """
    _check_pair(a, b)
    lead = a.shape[: a.ndim - frame_ndim]
    H, W = a.shape[len(lead): len(lead) + 2]
    pa, pb = _planes(a, frame_ndim), _planes(b, frame_ndim)
    k = gaussian_kernel()
    stack = np.concatenate([pa, pb, pa * pa, pb * pb, pa * pb])
    mu_a, mu_b, aa, bb, ab = np.split(kernels.gaussian_filter(stack, k), 5)
    var_a = aa - mu_a * mu_a
    var_b = bb - mu_b * mu_b
    cov = ab - mu_a * mu_b
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    m = num / den
    n_ch = a.shape[-1] if frame_ndim == 3 else 1
    return m.reshape(lead + (n_ch, H, W)).mean(axis=-3)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM; videos (4-D) are scored per frame and averaged.

    Like the common reference implementation, the 5-pixel border affected by
    padding is excluded from the mean.
    """
    _check_pair(a, b)
    frame_ndim = 3 if a.ndim in (3, 4) else 2
    if a.ndim not in (2, 3, 4):
        raise ShapeError(f"expected a frame or a video, got shape {a.shape}")
    m = ssim_map(a, b, frame_ndim)
    pad = (SSIM_WIN - 1) // 2
    crop = m[..., pad: m.shape[-2] - pad, pad: m.shape[-1] - pad]
    if crop.size == 0:
        raise ShapeError(f"frames smaller than the {SSIM_WIN}x{SSIM_WIN} window: {a.shape}")
    if a.ndim == 4:
        return float(crop.reshape(crop.shape[0], -1).mean(axis=1).mean())
    return float(crop.mean())


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    d = np.asarray(a, dtype=np.float64) - b
    return float(np.mean(d * d))


def psnr_from_mse(value: float) -> float:
    if value <= 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(DATA_RANGE ** 2 / value)))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    return psnr_from_mse(mse(a, b))


def _region(out: np.ndarray, gt: np.ndarray, sel: np.ndarray, smap: np.ndarray) -> dict | None:
    n = int(sel.sum())
    if n == 0:
        return None
    d = np.asarray(out, dtype=np.float64)[sel] - gt[sel]
    m = float(np.mean(d * d))
    return {
        "pixels": n,
        "mae": float(np.mean(np.abs(d))),
        "mse": m,
        "psnr": psnr_from_mse(m),
        "ssim": float(smap[sel].mean()),
    }


def region_metrics(out: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> dict:
    """Metrics over hole pixels (mask 0) and known pixels (mask 1) separately.

    Region SSIM averages the full-resolution SSIM map over the region's pixels.
    An empty region has no entry.
    """
    _check_pair(out, gt)
    if mask.shape != out.shape[:3]:
        raise ShapeError(f"mask {mask.shape} does not match video {out.shape}")
    keep = np.asarray(mask) > 0
    smap = ssim_map(out, gt)
    res = {}
    for name, sel in (("hole", ~keep), ("known", keep)):
        entry = _region(out, gt, sel, smap)
        if entry is not None:
            res[name] = entry
    return res


def temporal_consistency(out: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean absolute change between consecutive frames, restricted to the hole region.

    A pixel pair counts when the pixel is a hole in either frame. Without a mask the
    whole frame is used. Returns 0.0 when no pair qualifies.
    """
    if out.shape[0] < 2:
        raise ShapeError(f"need at least 2 frames, got {out.shape[0]}", axis="frames")
    x = np.asarray(out, dtype=np.float64)
    diff = np.abs(np.diff(x, axis=0))
    if diff.ndim == 4:
        diff = diff.mean(axis=-1)
    if mask is None:
        return float(diff.mean())
    hole = np.asarray(mask) == 0
    sel = hole[1:] | hole[:-1]
    if not sel.any():
        return 0.0
    return float(diff[sel].mean())


class LearnedMetric(Protocol):
    """Hook for network-based scores (e.g. LPIPS, FVD); none ship with the package."""

    def __call__(self, out: np.ndarray, gt: np.ndarray) -> float: ...


LEARNED_METRICS: dict[str, LearnedMetric] = {}


def register_metric(name: str, fn: Callable[[np.ndarray, np.ndarray], float]) -> None:
    LEARNED_METRICS[name] = fn


def evaluate(out: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None, name: str = "video") -> dict:
    """One report row: global SSIM/PSNR, region split and the flicker proxy."""
    row = {"id": name, "ssim": ssim(out, gt), "psnr": psnr(out, gt)}
    if mask is not None:
        row["regions"] = region_metrics(out, gt, mask)
    if out.shape[0] >= 2:
        row["temporal_consistency"] = temporal_consistency(out, mask)
    for key, fn in LEARNED_METRICS.items():
        row[key] = float(fn(out, gt))
    return row


def aggregate(rows: list[dict]) -> dict:
    """Means over rows; a region statistic is averaged over the rows that have that region."""
    agg: dict = {"count": len(rows)}
    if not rows:
        return agg
    for key in ("ssim", "psnr", "temporal_consistency"):
        vals = [r[key] for r in rows if key in r]
        if vals:
            agg[key] = float(np.mean(vals))
    for region in ("hole", "known"):
        entries = [r["regions"][region] for r in rows if region in r.get("regions", {})]
        if entries:
            agg[region] = {k: float(np.mean([e[k] for e in entries])) for k in ("mae", "mse", "psnr", "ssim")}
    return agg


def write_report(path, rows: list[dict]) -> dict:
    report = {"examples": rows, "aggregate": aggregate(rows)}
    Path(path).write_text(json.dumps(report, indent=1))
    return report
