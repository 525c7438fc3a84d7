"""Procedural (background video, moving object mask, prompt) examples.

Backgrounds are smooth analytic textures translated over time, so every frame
is Lipschitz in space with slope at most ``MAX_SLOPE`` per pixel and adjacent
frames differ by at most ``MAX_SLOPE * motion`` per pixel. Objects are
star-shaped holes that follow a smoothed random walk.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SCENE_KINDS = ("gradient-drift", "stripes", "blobs", "checker-flow")
OBJECT_SHAPES = ("ellipse", "rectangle", "polygon-blob")

# per-pixel slope bound shared by every texture (value units per pixel)
MAX_SLOPE = 0.05

SCENE_PROMPTS = {
    "gradient-drift": "a drifting gradient backdrop",
    "stripes": "soft diagonal stripes sliding slowly",
    "blobs": "floating soft color blobs",
    "checker-flow": "a flowing soft checker pattern",
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    kind: str = "gradient-drift"
    frames: int = 17
    height: int = 64
    width: int = 64
    motion: float = 0.5  # texture drift, pixels per frame

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; choose from {SCENE_KINDS}")
        if min(self.frames, self.height, self.width) < 1 or self.motion < 0:
            raise ValueError("extents must be positive and motion non-negative")


@dataclass(frozen=True)
class ObjectSpec:
    seed: int
    shape: str = "ellipse"
    min_frac: float = 0.05
    max_frac: float = 0.25
    step: float = 1.5  # maximum centre shift, pixels per frame
    deform: float = 0.1  # relative per-frame area / outline wobble

    def __post_init__(self):
        if self.shape not in OBJECT_SHAPES:
            raise ValueError(f"unknown object shape {self.shape!r}; choose from {OBJECT_SHAPES}")
        if not 0 <= self.min_frac <= self.max_frac <= 0.5:
            raise ValueError(f"need 0 <= min_frac <= max_frac <= 0.5, got {self.min_frac}, {self.max_frac}")
        if self.step < 0 or not 0 <= self.deform < 1:
            raise ValueError("step must be >= 0 and deform in [0, 1)")


@dataclass
class Example:
    id: str
    video: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    mask: np.ndarray  # (T, H, W) uint8 keep-map
    prompt: str
    scene: SceneSpec
    obj: ObjectSpec

    def meta(self) -> dict:
        return {"scene": asdict(self.scene), "object": asdict(self.obj)}


def _palette(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two colours whose per-channel difference stays below 0.6."""
    a = rng.uniform(0.15, 0.85, 3)
    b = np.clip(a + rng.uniform(-0.6, 0.6, 3), 0.05, 0.95)
    return a, b


def _weight_field(kind: str, rng: np.random.Generator, T: int, H: int, W: int, motion: float) -> np.ndarray:
    """Scalar mixing weight in [0, 1] with spatial slope <= MAX_SLOPE / 0.6 per pixel."""
    slope = MAX_SLOPE / 0.6
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    theta = rng.uniform(0, 2 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta)])
    tt = np.arange(T, dtype=np.float64)[:, None, None]
    shift_x = motion * direction[0] * tt
    shift_y = motion * direction[1] * tt
    if kind == "gradient-drift":
        # slow sinusoid whose period exceeds the frame, so it reads as a gradient
        period = max(pi_period(slope), rng.uniform(1.5, 3.0) * max(H, W))
        phi = rng.uniform(0, 2 * np.pi)
        u = np.cos(theta) * (xx - shift_x) + np.sin(theta) * (yy - shift_y)
        return 0.5 + 0.5 * np.sin(2 * np.pi * u / period + phi)
    if kind == "stripes":
        period = rng.uniform(1.0, 1.5) * pi_period(slope)
        phi = rng.uniform(0, 2 * np.pi)
        ang = theta + rng.uniform(0.3, 1.2)
        u = np.cos(ang) * (xx - shift_x) + np.sin(ang) * (yy - shift_y)
        return 0.5 + 0.5 * np.sin(2 * np.pi * u / period + phi)
    if kind == "checker-flow":
        # |grad(sx * sy)| <= 2 pi / p, same bound as a single sinusoid
        period = rng.uniform(1.0, 1.4) * pi_period(slope)
        px, py = rng.uniform(0, 2 * np.pi, 2)
        sx = np.sin(2 * np.pi * (xx - shift_x) / period + px)
        sy = np.sin(2 * np.pi * (yy - shift_y) / period + py)
        return 0.5 + 0.5 * sx * sy
    # blobs: soft maximum of a few Gaussian bumps, each slope-limited
    k = int(rng.integers(2, 4))
    sigma = rng.uniform(1.0, 1.3) / (slope * np.sqrt(np.e))
    centers = rng.uniform(0, 1, (k, 2)) * [H, W]
    field = np.zeros((T, H, W))
    for cy, cx in centers:
        d2 = (yy - cy - shift_y) ** 2 + (xx - cx - shift_x) ** 2
        field = np.maximum(field, np.exp(-d2 / (2 * sigma ** 2)))
    return field


def pi_period(slope: float) -> float:
    """Smallest period for which ``0.5 + 0.5 sin(2 pi u / p)`` has slope <= ``slope``."""
    return np.pi / slope


def gen_background(spec: SceneSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0x5C3E])
    a, b = _palette(rng)
    w = _weight_field(spec.kind, rng, spec.frames, spec.height, spec.width, spec.motion)
    video = a + (b - a) * w[..., None]
    return np.clip(video, 0.0, 1.0).astype(np.float32)


def _shape_inside(shape: str, dy, dx, scale: float, aspect: float, rot: float, harmonics) -> np.ndarray:
    c, s = np.cos(rot), np.sin(rot)
    u = (c * dx + s * dy) / (scale * aspect)
    v = (-s * dx + c * dy) / (scale / aspect)
    if shape == "ellipse":
        return u * u + v * v <= 1.0
    if shape == "rectangle":
        return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    ang = np.arctan2(v, u)
    r = np.ones_like(ang)
    for k, amp, ph in harmonics:
        r = r + amp * np.cos(k * ang + ph)
    return np.hypot(u, v) <= r


def _unit_area(shape: str, harmonics) -> float:
    if shape == "ellipse":
        return np.pi
    if shape == "rectangle":
        return 4.0
    # 0.5 * integral of r(theta)^2 over the circle
    return np.pi * (1.0 + 0.5 * sum(amp * amp for _, amp, _ in harmonics))


def _extent(shape: str, harmonics) -> float:
    if shape == "rectangle":
        return np.sqrt(2.0)
    if shape == "polygon-blob":
        return 1.0 + sum(abs(amp) for _, amp, _ in harmonics)
    return 1.0


@dataclass(frozen=True)
class ObjectPose:
    cy: float
    cx: float
    frac: float  # target hole area fraction
    rot: float


def _object_setup(spec: ObjectSpec, height: int, width: int):
    rng = np.random.default_rng([spec.seed, 0x0B1E])
    area_px = height * width
    # keep rasterised areas inside [min_frac, max_frac] despite pixel quantisation
    margin = 2.0 * np.sqrt(area_px * spec.max_frac) / area_px + 1.0 / area_px
    lo = min(spec.min_frac + margin, spec.max_frac)
    hi = max(spec.max_frac - margin, lo)
    base = rng.uniform(lo, hi)
    aspect = np.sqrt(rng.uniform(0.6, 1.6))
    rot = rng.uniform(0, np.pi)
    harmonics = []
    if spec.shape == "polygon-blob":
        for k in (2, 3, 5):
            harmonics.append((k, rng.uniform(0.05, 0.15), rng.uniform(0, 2 * np.pi)))
    return rng, (lo, hi, base, aspect, rot, tuple(harmonics))


def object_track(spec: ObjectSpec, frames: int, height: int, width: int) -> list[ObjectPose]:
    """Per-frame pose of the object: a smoothed random walk with speed capped at ``spec.step``."""
    rng, (lo, hi, base, aspect, rot, harmonics) = _object_setup(spec, height, width)
    unit = _unit_area(spec.shape, harmonics)
    reach = _extent(spec.shape, harmonics) * max(aspect, 1 / aspect)
    half = reach * np.sqrt(hi * height * width / unit) + 1
    ylo, yhi = min(half, height / 2), max(half, height - half)
    xlo, xhi = min(half, width / 2), max(half, width - half)
    cy = rng.uniform(ylo, max(ylo, yhi))
    cx = rng.uniform(xlo, max(xlo, xhi))
    vel = np.zeros(2)
    phase = rng.uniform(0, 2 * np.pi)
    poses = []
    for f in range(frames):
        frac = float(np.clip(base * (1 + spec.deform * np.sin(0.4 * f + phase)), lo, hi))
        poses.append(ObjectPose(cy, cx, frac, rot + spec.deform * 0.5 * np.sin(0.3 * f + phase)))
        vel = 0.8 * vel + rng.normal(0, 0.5 * spec.step + 1e-12, 2)
        speed = np.hypot(*vel)
        if speed > spec.step:
            vel *= spec.step / speed
        ny = float(np.clip(cy + vel[0], ylo, max(ylo, yhi)))
        nx = float(np.clip(cx + vel[1], xlo, max(xlo, xhi)))
        vel = np.array([ny - cy, nx - cx])
        cy, cx = ny, nx
    return poses


def gen_object_mask(spec: ObjectSpec, frames: int, height: int, width: int) -> np.ndarray:
    """Keep-map ``(T, H, W)`` uint8 with one moving star-shaped hole per frame."""
    mask = np.ones((frames, height, width), dtype=np.uint8)
    if spec.max_frac <= 0:
        return mask
    _, (_, _, _, aspect, _, harmonics) = _object_setup(spec, height, width)
    unit = _unit_area(spec.shape, harmonics)
    yy, xx = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    for f, pose in enumerate(object_track(spec, frames, height, width)):
        scale = np.sqrt(pose.frac * height * width / unit)
        hole = _shape_inside(spec.shape, yy - pose.cy, xx - pose.cx, scale, aspect, pose.rot, harmonics)
        mask[f][hole] = 0
    return mask


def gen_example(seed: int, frames: int = 17, height: int = 64, width: int = 64, **object_overrides) -> Example:
    """One paired example; scene kind, object shape and motion are drawn from ``seed``."""
    rng = np.random.default_rng([seed, 0xE7A])
    kind = SCENE_KINDS[int(rng.integers(len(SCENE_KINDS)))]
    shape = OBJECT_SHAPES[int(rng.integers(len(OBJECT_SHAPES)))]
    scene = SceneSpec(seed=seed, kind=kind, frames=frames, height=height, width=width,
                      motion=float(rng.uniform(0.0, 0.5)))
    obj = ObjectSpec(seed=seed, shape=shape, **object_overrides)
    return Example(
        id=f"{seed:06d}",
        video=gen_background(scene),
        mask=gen_object_mask(obj, frames, height, width),
        prompt=SCENE_PROMPTS[kind],
        scene=scene,
        obj=obj,
    )


def gen_corpus(count: int, seed: int = 0, frames: int = 17, height: int = 64, width: int = 64) -> list[Example]:
    return [gen_example(seed * 1_000_003 + i, frames, height, width) for i in range(count)]
