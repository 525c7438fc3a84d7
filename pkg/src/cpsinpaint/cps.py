"""Circular position-shift scheduling for sequences longer than the model window.

The latent sequence of length ``l`` is reflected into a circle of length
``L = 2l - 2`` (frames ``0..l-1`` then ``l-2..1``). At every denoising step the
circle is tiled by contiguous windows of ``f`` positions whose start rotates by
``alpha`` positions per step, so window seams never stay in one place. Each
window is advanced one Euler step by the model; positions ``[0, l)`` of the
final circle are the result.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from cpsinpaint.errors import NumericError, ScheduleError, ShapeError
from cpsinpaint.flow import euler_sample

# (z_window, c_mv_window, c_m_window, t) -> velocity_window
WindowModel = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]

DEFAULT_ALPHA = 7


@dataclass(frozen=True)
class CircularSchedule:
    l: int
    f: int
    alpha: int = DEFAULT_ALPHA
    alpha_sigma: int = 0

    @property
    def L(self) -> int:
        return 2 * self.l - 2

    @property
    def indices(self) -> np.ndarray:
        """Circular position -> original latent frame."""
        return np.concatenate([np.arange(self.l), np.arange(self.l - 2, 0, -1)]).astype(np.int64)

    def advanced(self) -> "CircularSchedule":
        return dataclasses.replace(self, alpha_sigma=self.alpha_sigma + self.alpha)


@dataclass(frozen=True)
class Window:
    positions: np.ndarray  # circular positions, length f
    frames: np.ndarray  # original latent frame of each position


@dataclass(frozen=True)
class WindowPlan:
    alpha_sigma: int
    windows: tuple[Window, ...]

    def position_sets(self) -> list[list[int]]:
        return [w.positions.tolist() for w in self.windows]

    def frame_lists(self) -> list[list[int]]:
        return [w.frames.tolist() for w in self.windows]


def build_circular(l: int, f: int | None = None, alpha: int = DEFAULT_ALPHA) -> CircularSchedule:
    if l < 2:
        raise ScheduleError(f"circular schedule needs at least 2 latent frames, got l={l}")
    if alpha < 0:
        raise ScheduleError(f"shift offset must be >= 0, got alpha={alpha}")
    return CircularSchedule(l=l, f=2 * l - 2 if f is None else f, alpha=alpha)


def plan_windows(schedule: CircularSchedule) -> WindowPlan:
    L, f = schedule.L, schedule.f
    if f < 1 or f > L:
        raise ScheduleError(f"window f={f} must lie in [1, L={L}]")
    if L % f:
        raise ScheduleError(
            f"window f={f} does not divide circular length L={L}; pad the latent sequence "
            f"to l={padded_length(schedule.l, f)} first"
        )
    a = schedule.alpha_sigma % L
    # right-pad with the first ``a`` entries (wrap mode), then tile from ``a``
    curr_pos = np.pad(np.arange(L, dtype=np.int64), (0, a), mode="wrap")
    curr_frames = schedule.indices[curr_pos]
    windows = []
    s, e, processed = a, a + f, 0
    while processed < L:
        windows.append(Window(curr_pos[s:e], curr_frames[s:e]))
        s, e, processed = s + f, e + f, processed + f
    return WindowPlan(alpha_sigma=schedule.alpha_sigma, windows=tuple(windows))


def padded_length(l: int, f: int) -> int:
    """Smallest ``l' >= l`` whose circle ``2l' - 2`` is a multiple of ``f``."""
    lp = max(l, 2)
    while (2 * lp - 2) % f:
        lp += 1
    return lp


def pad_latents(seq: np.ndarray, l_target: int) -> np.ndarray:
    """Repeat the last latent frame until the sequence has ``l_target`` frames."""
    extra = l_target - seq.shape[0]
    if extra <= 0:
        return seq
    return np.concatenate([seq, np.repeat(seq[-1:], extra, axis=0)], axis=0)


def single_pass_denoise(
    model: WindowModel,
    c_mv: np.ndarray,
    c_m: np.ndarray,
    steps: int,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Plain Euler sampling over the whole (short) latent sequence."""
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        noise = rng.standard_normal(c_mv.shape)
    return euler_sample(lambda z, t: model(z, c_mv, c_m, t), noise, steps)


def cps_denoise(
    model: WindowModel,
    c_mv: np.ndarray,
    c_m: np.ndarray,
    steps: int,
    window: int,
    alpha: int = DEFAULT_ALPHA,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Denoise ``l`` latent frames with windows of ``window`` frames on the reflected circle.

    Sequences with ``l <= window`` fit in one call and take the single-pass route
    (``noise`` is then truncated to ``l`` frames); longer ones go through ``circular_pass``.
    """
    l = c_mv.shape[0]
    if c_m.shape[0] != l:
        raise ShapeError(f"c_mv has {l} frames but c_m has {c_m.shape[0]}", axis="frames")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if l <= window:
        if noise is not None:
            noise = noise[:l]
        return single_pass_denoise(model, c_mv, c_m, steps, noise=noise, rng=rng)
    return circular_pass(model, c_mv, c_m, steps, window, alpha, noise, rng, trace)


def circular_pass(
    model: WindowModel,
    c_mv: np.ndarray,
    c_m: np.ndarray,
    steps: int,
    window: int,
    alpha: int = DEFAULT_ALPHA,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Circular position-shift sampling regardless of whether the sequence would fit one window.

    ``noise`` holds the initial latent for every circular position, shape ``(L, h, w, c)``;
    drawn from ``rng`` when omitted. When ``trace`` is a list, one record per step is
    appended with the unreduced accumulated offset and the window plan used.
    """
    l = c_mv.shape[0]
    if c_m.shape[0] != l:
        raise ShapeError(f"c_mv has {l} frames but c_m has {c_m.shape[0]}", axis="frames")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    schedule = build_circular(l, window, alpha)
    L = schedule.L
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        noise = rng.standard_normal((L,) + c_mv.shape[1:])
    if noise.shape != (L,) + c_mv.shape[1:]:
        raise ShapeError(f"initial noise must have shape {(L,) + c_mv.shape[1:]}, got {noise.shape}")

    z = np.array(noise, dtype=np.float64, copy=True)
    dt = 1.0 / steps
    for i in range(steps):
        t = 1.0 - i * dt
        plan = plan_windows(schedule)
        if trace is not None:
            trace.append({"step": i, "t": t, "alpha_sigma": schedule.alpha_sigma, "plan": plan})
        for win in plan.windows:
            v = model(z[win.positions], c_mv[win.frames], c_m[win.frames], t)
            z[win.positions] = z[win.positions] - dt * v
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite latent after step {i}")
        schedule = schedule.advanced()
    return z[:l]


def schedule_dump(l: int, window: int, alpha: int, steps: int) -> list[str]:
    """Human-readable window plan for every denoising step."""
    sched = build_circular(l, window, alpha)
    lines = [f"l={l} L={sched.L} f={window} alpha={alpha} steps={steps}",
             f"indices={sched.indices.tolist()}"]
    for i in range(steps):
        plan = plan_windows(sched)
        lines.append(f"step {i} t={1.0 - i / steps:.4f} alpha_sigma={sched.alpha_sigma}")
        for j, w in enumerate(plan.windows):
            lines.append(f"  window {j}: positions={w.positions.tolist()} frames={w.frames.tolist()}")
        sched = sched.advanced()
    return lines

