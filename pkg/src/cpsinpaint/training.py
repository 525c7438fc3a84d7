"""From pixel examples to latent training batches, plus the two-stage and distillation loops."""
from __future__ import annotations

import dataclasses
import json
import logging
from typing import Callable, Sequence

import numpy as np

from cpsinpaint.codec import encode, pad_to_grid
from cpsinpaint.config import RunConfig
from cpsinpaint.denoiser import VideoDiT
from cpsinpaint.flow import FlowState, LatentBatch, distill_step, make_student, sample_frame_step, train_step
from cpsinpaint.masks import apply_mask, dilate_holes, to_latent_mask
from cpsinpaint.prompt import embed_prompt
from cpsinpaint.synth import Example

log = logging.getLogger(__name__)


def clip_indices(n_frames: int, clip_len: int, step: int, start: int) -> np.ndarray:
    """Frame indices ``start, start+step, ...`` bounced back and forth inside ``[0, n_frames)``."""
    if n_frames == 1:
        return np.zeros(clip_len, dtype=np.int64)
    period = 2 * (n_frames - 1)
    p = (start + step * np.arange(clip_len)) % period
    return np.where(p < n_frames, p, period - p)


class BatchSampler:
    """Draws random clips (random frame step and start) and encodes them to latent batches."""

    def __init__(self, examples: Sequence[Example], run: RunConfig, rng: np.random.Generator):
        if not examples:
            raise ValueError("no training examples")
        self.examples = list(examples)
        self.run = run
        self.rng = rng
        m = run.model
        self._prompts = [embed_prompt(ex.prompt, m.d_txt, m.n_txt) for ex in self.examples]

    def encode_clip(self, ex: Example, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        codec = self.run.codec
        video, _ = pad_to_grid(ex.video[idx], codec)
        mask, _ = pad_to_grid(ex.mask[idx], codec)
        x0 = encode(video, codec)
        cond = encode(apply_mask(video, mask), codec)
        keep = to_latent_mask(mask, codec)
        hole = dilate_holes(keep, self.run.flow.dilation_radius)
        return x0, cond, keep, hole

    def sample(self, batch_size: int) -> LatentBatch:
        flow = self.run.flow
        parts = []
        prompts = []
        for _ in range(batch_size):
            k = int(self.rng.integers(len(self.examples)))
            ex = self.examples[k]
            step = sample_frame_step(self.rng, flow.frame_step_range)
            start = int(self.rng.integers(ex.video.shape[0]))
            parts.append(self.encode_clip(ex, clip_indices(ex.video.shape[0], flow.clip_frames, step, start)))
            prompts.append(self._prompts[k])
        x0, cond, keep, hole = (np.stack(p) for p in zip(*parts))
        return LatentBatch(x0, cond, keep.astype(np.float64), hole, np.stack(prompts))


def _emit(record: dict, sink: Callable[[str], None] | None) -> None:
    if sink is not None:
        sink(json.dumps(record))


def train(
    model: VideoDiT,
    examples: Sequence[Example],
    run: RunConfig,
    log_sink: Callable[[str], None] | None = None,
    log_every: int = 1,
) -> FlowState:
    """Stage 1 (plain L2) for ``stage1_iters`` updates, then stage 2 (hole-weighted) for ``stage2_iters``."""
    flow = run.flow
    state = FlowState.create(model, flow)
    sampler = BatchSampler(examples, run, np.random.default_rng([flow.seed, 1]))
    total = flow.stage1_iters + flow.stage2_iters
    for _ in range(total):
        train_step(state, sampler.sample(flow.batch_size), flow)
        rec = state.history[-1]
        if rec["iteration"] % log_every == 0 or rec["iteration"] == total - 1:
            _emit({"iteration": rec["iteration"], "stage": rec["stage"], "loss": rec["loss"]}, log_sink)
        if rec["iteration"] % 100 == 0:
            log.info("iter %d stage %d loss %.5f", rec["iteration"], rec["stage"], rec["loss"])
    return state


def distill(
    teacher: VideoDiT,
    examples: Sequence[Example],
    run: RunConfig,
    iters: int,
    scale: float = 3.0,
    log_sink: Callable[[str], None] | None = None,
    log_every: int = 1,
) -> FlowState:
    """Train a guidance-conditioned student (initialised from ``teacher``) at a fixed guidance scale."""
    flow = dataclasses.replace(run.flow, lr=run.flow.distill_lr)
    student = make_student(teacher, seed=flow.seed)
    state = FlowState.create(student, flow)
    state.total_iters = iters
    sampler = BatchSampler(examples, run, np.random.default_rng([flow.seed, 2]))
    for _ in range(iters):
        distill_step(state, teacher, sampler.sample(flow.batch_size), flow, scale)
        rec = state.history[-1]
        if rec["iteration"] % log_every == 0 or rec["iteration"] == iters - 1:
            _emit({"iteration": rec["iteration"], "stage": "distill", "loss": rec["loss"]}, log_sink)
    return state
