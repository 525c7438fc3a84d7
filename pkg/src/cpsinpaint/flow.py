"""Rectified flow: straight noise/data paths, Euler sampling, guidance and distillation.

Convention: ``t = 0`` is data, ``t = 1`` is unit Gaussian noise, and the model
predicts the constant path velocity ``noise - data``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from cpsinpaint.denoiser import TrainBatch, VideoDiT, init_params, loss_and_gradients, velocity_loss
from cpsinpaint.errors import NumericError, TrainingError

FRAME_STEP_RANGE = (1, 6)


@dataclass(frozen=True)
class FlowConfig:
    steps: int = 40
    stage1_iters: int = 1500
    stage2_iters: int = 500
    batch_size: int = 8
    lr: float = 1e-3  # full-scale AdamW runs use 3e-5
    warmup: int = 50
    min_lr_ratio: float = 1.0  # cosine decay to lr * ratio by the final iteration; 1.0 keeps lr flat
    distill_lr: float = 1e-4  # students start at the teacher's optimum, so they get a much gentler rate
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    frame_step_range: tuple[int, int] = FRAME_STEP_RANGE
    clip_frames: int = 17
    prompt_dropout: float = 0.1
    dilation_radius: int = 1
    cfg_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frame_step_range", tuple(int(v) for v in self.frame_step_range))
        lo, hi = self.frame_step_range
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 1 <= lo <= hi <= 6:
            raise ValueError(f"frame_step_range must lie within [1, 6], got {self.frame_step_range}")
        if not 0.0 <= self.min_lr_ratio <= 1.0:
            raise ValueError(f"min_lr_ratio must lie in [0, 1], got {self.min_lr_ratio}")
        if self.lr <= 0 or self.distill_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be >= 0")


# ------------------------------------------------------------------ path maths

def _per_sample(t, ndim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return t.reshape(t.shape + (1,) * (ndim - t.ndim)) if t.ndim else t


def interpolate(x0: np.ndarray, noise: np.ndarray, t) -> np.ndarray:
    """``(1 - t) * x0 + t * noise``; ``t`` is a scalar or one value per leading-axis sample."""
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {noise.shape}")
    tt = np.asarray(t, dtype=np.float64)
    if np.any(tt < 0) or np.any(tt > 1):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    tt = _per_sample(tt, x0.ndim)
    return (1.0 - tt) * x0 + tt * noise


def velocity_target(x0: np.ndarray, noise: np.ndarray) -> np.ndarray:
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {noise.shape}")
    return noise - x0


def sample_frame_step(rng: np.random.Generator, frame_step_range: tuple[int, int] = FRAME_STEP_RANGE) -> int:
    lo, hi = frame_step_range
    return int(rng.integers(lo, hi + 1))


def cfg_combine(v_uncond: np.ndarray, v_cond: np.ndarray, scale: float) -> np.ndarray:
    """``v_u + s (v_c - v_u)``, written so that s = 1 and s = 0 return the inputs exactly."""
    if v_uncond.shape != v_cond.shape:
        raise ValueError(f"shape mismatch: {v_uncond.shape} vs {v_cond.shape}")
    return (1.0 - scale) * v_uncond + scale * v_cond


def euler_sample(velocity: Callable[[np.ndarray, float], np.ndarray], noise: np.ndarray, steps: int) -> np.ndarray:
    """Integrate from ``t = 1`` (``noise``) to ``t = 0`` with ``steps`` uniform Euler steps."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    z = np.array(noise, dtype=np.float64, copy=True)
    dt = 1.0 / steps
    for i in range(steps):
        t = 1.0 - i * dt
        z = z - dt * velocity(z, t)
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite sample state after step {i} (t={t:.4f})")
    return z


# ------------------------------------------------------------------ optimizer

class AdamW:
    """Adam with decoupled weight decay (biases and 1-D tensors are not decayed)."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and p.ndim > 1:
                p *= 1.0 - lr * self.weight_decay
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= s
    return total


def learning_rate(cfg: FlowConfig, iteration: int, total: int | None = None) -> float:
    """Linear warmup, then flat or cosine-decayed towards ``lr * min_lr_ratio`` at ``total``."""
    if cfg.warmup > 0 and iteration < cfg.warmup:
        return cfg.lr * (iteration + 1) / cfg.warmup
    if total is None:
        total = cfg.stage1_iters + cfg.stage2_iters
    span = total - cfg.warmup
    if cfg.min_lr_ratio == 1.0 or span <= 0:
        return cfg.lr
    frac = min(1.0, (iteration - cfg.warmup) / span)
    return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * 0.5 * (1.0 + math.cos(math.pi * frac)))


# ------------------------------------------------------------------ training

@dataclass
class LatentBatch:
    """One training batch in latent space (leading axis = batch)."""

    x0: np.ndarray  # clean latent (B, t, h, w, c)
    cond_video: np.ndarray  # latent of the masked video
    cond_mask: np.ndarray  # latent keep-map (B, t, h, w)
    hole: np.ndarray  # dilated latent hole map (B, t, h, w)
    prompt: np.ndarray  # (B, n_txt, d_txt)


@dataclass
class FlowState:
    model: VideoDiT
    optimizer: AdamW
    rng: np.random.Generator
    iteration: int = 0
    stage1_iters: int = 0
    total_iters: int | None = None  # horizon of the learning-rate decay
    history: list[dict] = field(default_factory=list)

    @property
    def stage(self) -> int:
        return 1 if self.iteration < self.stage1_iters else 2

    @classmethod
    def create(cls, model: VideoDiT, cfg: FlowConfig) -> "FlowState":
        opt = AdamW(cfg.lr, (cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
        return cls(model, opt, np.random.default_rng(cfg.seed), stage1_iters=cfg.stage1_iters)


def _noised(batch: LatentBatch, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    B = batch.x0.shape[0]
    t = rng.uniform(0.0, 1.0, B)
    noise = rng.standard_normal(batch.x0.shape)
    return t, interpolate(batch.x0, noise, t), velocity_target(batch.x0, noise)


def train_step(state: FlowState, batch: LatentBatch, cfg: FlowConfig) -> FlowState:
    """One optimizer update; stage 1 uses plain L2, stage 2 the hole-weighted loss."""
    rng = state.rng
    t, z, target = _noised(batch, rng)
    prompt = batch.prompt.copy()
    drop = rng.random(prompt.shape[0]) < cfg.prompt_dropout
    prompt[drop] = 0.0  # null prompt
    stage = state.stage
    tb = TrainBatch(z, batch.cond_video, batch.cond_mask, t, prompt, target)
    try:
        loss, grads = loss_and_gradients(state.model, tb, stage, batch.hole if stage == 2 else None)
    except NumericError as exc:
        raise TrainingError(str(exc), state.iteration) from exc
    gnorm = clip_gradients(grads, cfg.grad_clip)
    state.optimizer.step(state.model.params, grads, learning_rate(cfg, state.iteration, state.total_iters))
    state.history.append({"iteration": state.iteration, "stage": stage, "loss": loss, "grad_norm": gnorm})
    state.iteration += 1
    return state


# ------------------------------------------------------------------ distillation

def make_student(teacher: VideoDiT, seed: int = 0) -> VideoDiT:
    """Student sharing the teacher's weights plus a guidance branch whose output starts at zero."""
    cfg = dataclasses.replace(teacher.cfg, guidance=True)
    fresh = init_params(cfg, seed)
    params = {k: v.copy() for k, v in teacher.params.items()}
    for name in fresh:
        if name.startswith("guide."):
            params[name] = fresh[name]
    return VideoDiT(cfg, params)


def guided_target(teacher: VideoDiT, z, cond_video, cond_mask, t, prompt, scale: float) -> np.ndarray:
    v_c = teacher.forward(z, cond_video, cond_mask, t, prompt)
    v_u = teacher.forward(z, cond_video, cond_mask, t, np.zeros_like(prompt))
    return cfg_combine(v_u, v_c, scale)


def distill_loss(student: VideoDiT, teacher: VideoDiT, z, cond_video, cond_mask, t, prompt, scale: float) -> float:
    target = guided_target(teacher, z, cond_video, cond_mask, t, prompt, scale)
    pred = student.forward(z, cond_video, cond_mask, t, prompt, np.full(z.shape[0], scale))
    if pred.shape != target.shape:
        raise ValueError(f"student output {pred.shape} vs teacher output {target.shape}")
    return velocity_loss(pred, target, 1)[0]


def distill_step(state: FlowState, teacher: VideoDiT, batch: LatentBatch, cfg: FlowConfig, scale: float = 3.0) -> FlowState:
    """Regress the guidance-conditioned student onto the teacher's guided velocity; only the student moves."""
    t, z, _ = _noised(batch, state.rng)
    target = guided_target(teacher, z, batch.cond_video, batch.cond_mask, t, batch.prompt, scale)
    tb = TrainBatch(z, batch.cond_video, batch.cond_mask, t, batch.prompt, target, np.full(z.shape[0], scale))
    try:
        loss, grads = loss_and_gradients(state.model, tb, 1)
    except NumericError as exc:
        raise TrainingError(str(exc), state.iteration) from exc
    gnorm = clip_gradients(grads, cfg.grad_clip)
    state.optimizer.step(state.model.params, grads, learning_rate(cfg, state.iteration, state.total_iters))
    state.history.append({"iteration": state.iteration, "stage": "distill", "loss": loss, "grad_norm": gnorm})
    state.iteration += 1
    return state
