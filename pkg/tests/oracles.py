"""Slow, loop-based reference implementations used as test oracles."""
from __future__ import annotations

import numpy as np


def temporal_min(mask: np.ndarray, s_t: int) -> np.ndarray:
    T = mask.shape[0]
    out = [mask[0].copy()]
    for g in range((T - 1) // s_t):
        frames = mask[1 + g * s_t: 1 + (g + 1) * s_t]
        cell = np.ones(mask.shape[1:], dtype=mask.dtype)
        for fr in frames:
            cell = np.minimum(cell, fr)
        out.append(cell)
    return np.stack(out)


def spatial_min(mask: np.ndarray, s_h: int, s_w: int) -> np.ndarray:
    T, H, W = mask.shape
    out = np.zeros((T, H // s_h, W // s_w), dtype=mask.dtype)
    for t in range(T):
        for i in range(H // s_h):
            for j in range(W // s_w):
                out[t, i, j] = min(
                    mask[t, i * s_h + a, j * s_w + b] for a in range(s_h) for b in range(s_w)
                )
    return out


def box_dilate(hole: np.ndarray, r: int) -> np.ndarray:
    T, H, W = hole.shape
    out = np.zeros_like(hole)
    for t, i, j in zip(*np.nonzero(hole)):
        out[max(0, t - r): t + r + 1, max(0, i - r): i + r + 1, max(0, j - r): j + r + 1] = 1
    return out


def circle_indices(l: int) -> list[int]:
    return list(range(l)) + list(range(l - 2, 0, -1))


def circular_denoise(model, c_mv, c_m, steps: int, f: int, alpha: int, noise: np.ndarray) -> np.ndarray:
    """Materialise the whole reflected circle and update rotated arcs of length f in order."""
    l = c_mv.shape[0]
    L = 2 * l - 2
    idx = circle_indices(l)
    full_mv = np.stack([c_mv[k] for k in idx])
    full_m = np.stack([c_m[k] for k in idx])
    z = noise.astype(np.float64).copy()
    for k in range(steps):
        t = 1.0 - k / steps
        start = (k * alpha) % L
        for j in range(L // f):
            pos = [(start + j * f + i) % L for i in range(f)]
            v = model(z[pos], full_mv[pos], full_m[pos], t)
            z[pos] = z[pos] - v / steps
    return z[:l]


class LinearWindowModel:
    """Seeded affine velocity that couples the frames of a window through their mean."""

    def __init__(self, c: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.a = rng.standard_normal((c, c)) * 0.3
        self.b = rng.standard_normal((c, c)) * 0.3
        self.m = rng.standard_normal((c, c)) * 0.3
        self.g = rng.standard_normal(c) * 0.3
        self.d = rng.standard_normal(c) * 0.3

    def __call__(self, z, c_mv, c_m, t):
        mean = z.mean(axis=0, keepdims=True)
        return z @ self.a + mean @ self.m + c_mv @ self.b + c_m[..., None] * self.g + t * self.d


def finite_difference_check(model, batch, stage: int, hole=None, eps: float = 1e-3):
    """Per-group max relative error between analytic and central-difference gradients.

    Relative error of a group is ``max|g_a - g_fd| / max(max|g_a|, max|g_fd|)``.
    """
    from cpsinpaint.denoiser import loss_and_gradients, velocity_loss

    _, grads = loss_and_gradients(model, batch, stage, hole)

    def loss():
        pred = model.forward(batch.noisy, batch.cond_video, batch.cond_mask, batch.timestep, batch.prompt,
                             batch.guidance)
        return velocity_loss(pred, batch.target, stage, hole)[0]

    errors = {}
    for name, p in model.params.items():
        fd = np.zeros_like(p)
        flat, gflat = p.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        scale = max(np.abs(grads[name]).max(), np.abs(fd).max(), 1e-30)
        errors[name] = float(np.abs(grads[name] - fd).max() / scale)
    return errors
