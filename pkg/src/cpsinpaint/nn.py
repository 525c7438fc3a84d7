"""Forward/backward pairs for the few layers the denoiser needs.

Every ``*_back`` takes the upstream gradient plus whatever the forward pass
cached and returns gradients w.r.t. the forward inputs.
"""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-6
_GELU_C = float(np.sqrt(2.0 / np.pi))


def linear_back(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def layernorm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    return xc * rstd, rstd


def layernorm_back(dxhat: np.ndarray, xhat: np.ndarray, rstd: np.ndarray) -> np.ndarray:
    return rstd * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * (x * x * x))))


def gelu_back(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    th = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    dth = (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * dth)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_back(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return dy * (s * (1.0 + x * (1.0 - s)))


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    B, N, D = x.shape
    return x.reshape(B, N, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, H * dh)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unmasked scaled dot-product attention on ``(B, H, N, dh)`` heads; returns (out, probs)."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    s = (q @ k.swapaxes(-1, -2)) * scale
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    return p @ v, p


def attention_back(
    do: np.ndarray, q: np.ndarray, k: np.ndarray, v: np.ndarray, p: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = 1.0 / np.sqrt(q.shape[-1])
    dv = p.swapaxes(-1, -2) @ do
    dp = do @ v.swapaxes(-1, -2)
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    return ds @ k, ds.swapaxes(-1, -2) @ q, dv


def sinusoid(values: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sin/cos features of scalar ``values`` (shape ``(B,)``) -> ``(B, dim)``."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    ang = np.asarray(values, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=-1)


def position_table(grid: tuple[int, int, int], dim: int) -> np.ndarray:
    """Factorized sinusoidal code for every (t, h, w) token of ``grid``, flattened t-major."""
    part = 2 * (dim // 6)
    dims = (dim - 2 * part, part, part)
    axes = []
    for n, d in zip(grid, dims):
        if d == 0:
            axes.append(np.zeros((n, 0)))
            continue
        pos = np.arange(n, dtype=np.float64)
        freqs = 1.0 / (10000.0 ** (np.arange(0, d, 2) / d))
        ang = pos[:, None] * freqs[None, :]
        axes.append(np.concatenate([np.sin(ang), np.cos(ang)], axis=-1))
    gt, gh, gw = grid
    table = np.concatenate(
        [
            np.broadcast_to(axes[0][:, None, None, :], (gt, gh, gw, dims[0])),
            np.broadcast_to(axes[1][None, :, None, :], (gt, gh, gw, dims[1])),
            np.broadcast_to(axes[2][None, None, :, :], (gt, gh, gw, dims[2])),
        ],
        axis=-1,
    )
    return table.reshape(gt * gh * gw, dim)
