"""Object removal end to end: prompt dialogue, masked conditioning, latent denoising, decoding.

Every stage failure surfaces as a ``PipelineError`` whose message starts with the
stage name (``pad``, ``encode``, ``prompt``, ``denoise``, ``decode``, ``detect``,
``describe``).
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from cpsinpaint.captioner import Backend, frame_payload
from cpsinpaint.codec import CodecConfig, decode, encode, pad_to_grid
from cpsinpaint.cps import DEFAULT_ALPHA, cps_denoise, pad_latents, padded_length, single_pass_denoise
from cpsinpaint.denoiser import VideoDiT
from cpsinpaint.errors import BackendError, InpaintError, PipelineError
from cpsinpaint.flow import cfg_combine
from cpsinpaint.masks import apply_mask, to_latent_mask
from cpsinpaint.prompt import embed_prompt

log = logging.getLogger(__name__)

CAPTION_FRAMES = 8
CAPTION_RETRIES = 2


@contextmanager
def stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except (InpaintError, ValueError, ArithmeticError) as exc:
        raise PipelineError(name, str(exc)) from exc


# ------------------------------------------------------------------ prompt dialogue

def sample_frames(video: np.ndarray, count: int = CAPTION_FRAMES) -> np.ndarray:
    """Indices of ``count`` frames spread uniformly over the clip (all frames if shorter)."""
    T = video.shape[0]
    if T <= count:
        return np.arange(T)
    return np.round(np.linspace(0, T - 1, count)).astype(np.int64)


def _ask(backend: Backend, message: dict, what: str, retries: int) -> dict:
    last = "no attempt made"
    for attempt in range(retries + 1):
        try:
            resp = backend.request(message)
        except BackendError as exc:
            last = str(exc)
        else:
            if resp.get("ok"):
                return resp
            last = resp.get("error", "backend reported failure")
        log.warning("%s attempt %d failed: %s", what, attempt + 1, last)
    raise PipelineError(what, f"captioner failed after {retries + 1} attempts ({retries} retries): {last}")


def _frames_message(video: np.ndarray, role: str, obj: str | None, count: int) -> dict:
    idx = sample_frames(video, count)
    return {"role": role, "frames": [frame_payload(video[i], int(i)) for i in idx], "object": obj}


def detect_objects(video: np.ndarray, backend: Backend, count: int = CAPTION_FRAMES,
                   retries: int = CAPTION_RETRIES) -> list[str]:
    if video.ndim != 4 or video.shape[0] == 0:
        raise PipelineError("detect", f"need a non-empty (T, H, W, C) video, got shape {video.shape}")
    resp = _ask(backend, _frames_message(video, "detect", None, count), "detect", retries)
    return list(resp.get("object_names", []))


def generate_prompt(video: np.ndarray, object_name: str, backend: Backend, count: int = CAPTION_FRAMES,
                    retries: int = CAPTION_RETRIES) -> str:
    """Scene description that leaves ``object_name`` out, returned verbatim."""
    if video.ndim != 4 or video.shape[0] == 0:
        raise PipelineError("describe", f"need a non-empty (T, H, W, C) video, got shape {video.shape}")
    msg = _frames_message(video, "describe_excluding", object_name, count)
    resp = _ask(backend, msg, "describe", retries)
    if object_name not in resp.get("object_names", []):
        log.warning("object %r was not detected in the clip; prompt describes the scene unchanged", object_name)
    text = resp.get("text", "")
    if not text.strip():
        raise PipelineError("describe", "captioner returned an empty description")
    return text


# ------------------------------------------------------------------ inpainting

@dataclass
class InpaintRequest:
    video: np.ndarray  # (T, H, W, C) in [0, 1]
    mask: np.ndarray  # (T, H, W) keep-map
    prompt: str = "background scene"
    composite: bool = False
    steps: int = 40
    guidance_scale: float = 3.0
    seed: int = 0
    window: int | None = None  # latent frames per model call; defaults to the model's max_f
    alpha: int = DEFAULT_ALPHA

    def __post_init__(self):
        if self.video.ndim != 4:
            raise ValueError(f"video must be (T, H, W, C), got {self.video.shape}")
        if self.mask.shape != self.video.shape[:3]:
            raise ValueError(f"mask {self.mask.shape} does not match video {self.video.shape}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")


def window_model(model: VideoDiT, prompt: np.ndarray, scale: float):
    """Velocity callable ``(z, c_mv, c_m, t)`` for one window.

    A guidance-conditioned student answers in one call; a plain model combines a
    conditional and an unconditional (zero prompt) call, skipping the latter at scale 1.
    """
    cond = prompt[None]
    if model.cfg.guidance:
        g = np.array([scale])

        def velocity(z, c_mv, c_m, t):
            return model.forward(z[None], c_mv[None], c_m[None], np.array([t]), cond, g)[0]
    else:
        uncond = np.zeros_like(cond)

        def velocity(z, c_mv, c_m, t):
            args = (z[None], c_mv[None], c_m[None], np.array([t]))
            v_c = model.forward(*args, cond)[0]
            if scale == 1.0:
                return v_c
            return cfg_combine(model.forward(*args, uncond)[0], v_c, scale)
    return velocity


def composite(generated: np.ndarray, video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Known pixels from ``video``, hole pixels from ``generated``."""
    keep = (np.asarray(mask) > 0)[..., None]
    return np.where(keep, video, generated.astype(video.dtype))


def inpaint(request: InpaintRequest, model: VideoDiT, codec: CodecConfig) -> np.ndarray:
    """Fill the holes of ``request.mask``; output has the input's extents and dtype."""
    with stage("pad"):
        video, info = pad_to_grid(request.video, codec)
        mask, _ = pad_to_grid(request.mask, codec)
    with stage("encode"):
        c_mv = encode(apply_mask(video, mask), codec)
        c_m = to_latent_mask(mask, codec).astype(np.float64)
    with stage("prompt"):
        emb = embed_prompt(request.prompt, model.cfg.d_txt, model.cfg.n_txt)
    with stage("denoise"):
        velocity = window_model(model, emb, request.guidance_scale)
        window = request.window or model.cfg.max_f
        rng = np.random.default_rng(request.seed)
        l = c_mv.shape[0]
        if l <= window:
            z = single_pass_denoise(velocity, c_mv, c_m, request.steps, rng=rng)
        else:
            lp = padded_length(l, window)
            z = cps_denoise(velocity, pad_latents(c_mv, lp), pad_latents(c_m, lp), request.steps,
                            window, request.alpha, rng=rng)[:l]
    with stage("decode"):
        out = info.crop(np.clip(decode(z, codec), 0.0, 1.0)).astype(request.video.dtype)
    if request.composite:
        out = composite(out, request.video, request.mask)
    return out


def uses_cps(latent_frames: int, window: int) -> bool:
    return latent_frames > window
