"""Hot inner loops: numba kernels with pure-numpy fallbacks.

Set ``CPSINPAINT_DISABLE_NUMBA=1`` before import to force the numpy path.
Both implementations are always importable as ``NUMPY_KERNELS`` and (when numba
is installed) ``NUMBA_KERNELS`` so they can be compared directly.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("CPSINPAINT_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def _temporal_group_min_np(m: np.ndarray, s_t: int) -> np.ndarray:
    T, H, W = m.shape
    t = 1 + (T - 1) // s_t
    out = np.empty((t, H, W), dtype=m.dtype)
    out[0] = m[0]
    if t > 1:
        out[1:] = m[1:].reshape(t - 1, s_t, H, W).min(axis=1)
    return out


def _spatial_block_min_np(m: np.ndarray, s_h: int, s_w: int) -> np.ndarray:
    t, H, W = m.shape
    return m.reshape(t, H // s_h, s_h, W // s_w, s_w).min(axis=(2, 4))


def _sliding_max_axis(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    n = a.shape[axis]
    out = a.copy()
    for d in range(1, r + 1):
        if d >= n:
            break
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[axis] = slice(0, n - d)
        hi[axis] = slice(d, n)
        lo, hi = tuple(lo), tuple(hi)
        np.maximum(out[lo], a[hi], out=out[lo])
        np.maximum(out[hi], a[lo], out=out[hi])
    return out


def _box_dilate_np(hole: np.ndarray, r: int) -> np.ndarray:
    out = hole
    for axis in range(3):
        out = _sliding_max_axis(out, r, axis)
    return np.ascontiguousarray(out)


def _causal_pool_np(video: np.ndarray, s_t: int, s_h: int, s_w: int) -> np.ndarray:
    T, H, W, C = video.shape
    t, h, w = 1 + (T - 1) // s_t, H // s_h, W // s_w
    v = video.astype(np.float64, copy=False)
    out = np.empty((t, h, w, C), dtype=np.float64)
    out[0] = v[0].reshape(h, s_h, w, s_w, C).mean(axis=(1, 3))
    if t > 1:
        out[1:] = v[1:].reshape(t - 1, s_t, h, s_h, w, s_w, C).mean(axis=(1, 3, 5))
    return out


def _gaussian_filter_np(imgs: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable correlation of a stack of 2-D images, half-sample symmetric edges."""
    r = kernel.shape[0] // 2
    H, W = imgs.shape[1:]
    pad = np.pad(imgs, ((0, 0), (r, r), (0, 0)), mode="symmetric")
    tmp = np.zeros(imgs.shape, dtype=np.float64)
    for j, kv in enumerate(kernel):
        tmp += kv * pad[:, j:j + H, :]
    pad = np.pad(tmp, ((0, 0), (0, 0), (r, r)), mode="symmetric")
    out = np.zeros(imgs.shape, dtype=np.float64)
    for j, kv in enumerate(kernel):
        out += kv * pad[:, :, j:j + W]
    return out


NUMPY_KERNELS = SimpleNamespace(
    temporal_group_min=_temporal_group_min_np,
    spatial_block_min=_spatial_block_min_np,
    box_dilate=_box_dilate_np,
    causal_pool=_causal_pool_np,
    gaussian_filter=_gaussian_filter_np,
)


# ---------------------------------------------------------------- numba path

def _njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


@_njit
def temporal_group_min_nb(m, s_t):
    T, H, W = m.shape
    t = 1 + (T - 1) // s_t
    out = np.empty((t, H, W), dtype=m.dtype)
    out[0] = m[0]
    # frame-outer so every pass streams whole contiguous frames
    for k in range(1, t):
        f0 = (k - 1) * s_t + 1
        out[k] = m[f0]
        for f in range(f0 + 1, f0 + s_t):
            for i in range(H):
                for j in range(W):
                    if m[f, i, j] < out[k, i, j]:
                        out[k, i, j] = m[f, i, j]
    return out


@_njit
def spatial_block_min_nb(m, s_h, s_w):
    t, H, W = m.shape
    h, w = H // s_h, W // s_w
    out = np.empty((t, h, w), dtype=m.dtype)
    for k in range(t):
        for a in range(h):
            for b in range(w):
                v = m[k, a * s_h, b * s_w]
                for i in range(a * s_h, (a + 1) * s_h):
                    for j in range(b * s_w, (b + 1) * s_w):
                        if m[k, i, j] < v:
                            v = m[k, i, j]
                out[k, a, b] = v
    return out


@_njit
def box_dilate_nb(hole, r):
    # separable max filter built from shifted maxima, so every inner loop is a plain contiguous sweep
    n0, n1, n2 = hole.shape
    a = hole.copy()
    for d in range(1, min(r, n2 - 1) + 1):
        for i in range(n0):
            for j in range(n1):
                for k in range(n2 - d):
                    a[i, j, k] = max(a[i, j, k], hole[i, j, k + d])
                for k in range(n2 - 1, d - 1, -1):
                    a[i, j, k] = max(a[i, j, k], hole[i, j, k - d])
    b = a.copy()
    for d in range(1, min(r, n1 - 1) + 1):
        for i in range(n0):
            for j in range(n1 - d):
                for k in range(n2):
                    b[i, j, k] = max(b[i, j, k], a[i, j + d, k])
                    b[i, j + d, k] = max(b[i, j + d, k], a[i, j, k])
    out = b.copy()
    for d in range(1, min(r, n0 - 1) + 1):
        for i in range(n0 - d):
            for j in range(n1):
                for k in range(n2):
                    out[i, j, k] = max(out[i, j, k], b[i + d, j, k])
                    out[i + d, j, k] = max(out[i + d, j, k], b[i, j, k])
    return out


@_njit
def causal_pool_nb(video, s_t, s_h, s_w):
    T, H, W, C = video.shape
    t, h, w = 1 + (T - 1) // s_t, H // s_h, W // s_w
    out = np.zeros((t, h, w, C), dtype=np.float64)
    for k in range(t):
        if k == 0:
            f0, nf = 0, 1
        else:
            f0, nf = (k - 1) * s_t + 1, s_t
        inv = 1.0 / (nf * s_h * s_w)
        for a in range(h):
            for b in range(w):
                for c in range(C):
                    acc = 0.0
                    for f in range(f0, f0 + nf):
                        for i in range(a * s_h, (a + 1) * s_h):
                            for j in range(b * s_w, (b + 1) * s_w):
                                acc += video[f, i, j, c]
                    out[k, a, b, c] = acc * inv
    return out


@_njit
def _reflect_nb(i, n):
    # half-sample symmetric: d c b a | a b c d | d c b a
    while i < 0 or i >= n:
        if i < 0:
            i = -i - 1
        if i >= n:
            i = 2 * n - i - 1
    return i


@_njit
def gaussian_filter_nb(imgs, kernel):
    N, H, W = imgs.shape
    r = kernel.shape[0] // 2
    tmp = np.zeros((N, H, W), dtype=np.float64)
    out = np.zeros((N, H, W), dtype=np.float64)
    for n in range(N):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for q in range(-r, r + 1):
                    acc += kernel[q + r] * imgs[n, _reflect_nb(i + q, H), j]
                tmp[n, i, j] = acc
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for q in range(-r, r + 1):
                    acc += kernel[q + r] * tmp[n, i, _reflect_nb(j + q, W)]
                out[n, i, j] = acc
    return out


NUMBA_KERNELS = SimpleNamespace(
    temporal_group_min=temporal_group_min_nb,
    spatial_block_min=spatial_block_min_nb,
    box_dilate=box_dilate_nb,
    causal_pool=causal_pool_nb,
    gaussian_filter=gaussian_filter_nb,
) if numba is not None else None
ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def temporal_group_min(m: np.ndarray, s_t: int) -> np.ndarray:
    return ACTIVE.temporal_group_min(np.ascontiguousarray(m), int(s_t))


def spatial_block_min(m: np.ndarray, s_h: int, s_w: int) -> np.ndarray:
    return ACTIVE.spatial_block_min(np.ascontiguousarray(m), int(s_h), int(s_w))


def box_dilate(hole: np.ndarray, r: int) -> np.ndarray:
    if r == 0:
        return hole.copy()
    return ACTIVE.box_dilate(np.ascontiguousarray(hole), int(r))


def causal_pool(video: np.ndarray, s_t: int, s_h: int, s_w: int) -> np.ndarray:
    return ACTIVE.causal_pool(np.ascontiguousarray(video), int(s_t), int(s_h), int(s_w))


def gaussian_filter(imgs: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return ACTIVE.gaussian_filter(
        np.ascontiguousarray(imgs, dtype=np.float64), np.ascontiguousarray(kernel, dtype=np.float64)
    )
