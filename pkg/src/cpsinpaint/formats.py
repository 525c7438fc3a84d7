"""On-disk formats: headered tensor files, dataset directories and checkpoints.

Tensor file (``.cpsv`` video / ``.cpsm`` mask), all integers little-endian u32::

    magic    4 bytes   b"CPSV" (video) or b"CPSM" (mask)
    version  u32       1
    T H W C  4 x u32   extents (C = 1 for masks)
    payload            video: float32 LE, channel-planar order (C, T, H, W)
                       mask:  keep bits packed MSB-first over (T, H, W), zero-padded
                              to a whole byte

Dataset directory::

    manifest.json      {"format": "cpsinpaint-dataset", "version": 1, "examples": [...]}
    <id>.cpsv, <id>.cpsm

Each manifest entry holds ``id``, ``frames``, ``height``, ``width``, ``channels``,
``prompt``, ``scene``, ``object``, ``video`` and ``mask`` (file names).

Checkpoint::

    magic    8 bytes   b"CPSCKPT\\0"
    version  u32       1
    hlen     u32       byte length of the JSON header
    header             UTF-8 JSON: {"config": {...}, "kind": str, "extra": {...},
                       "tensors": [{"name", "shape", "offset", "count"}, ...]}
    payload            float32 LE tensors back to back; ``offset`` counts
                       bytes from the start of the payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from cpsinpaint.errors import FormatError
from cpsinpaint.synth import Example, ObjectSpec, SceneSpec

VIDEO_MAGIC = b"CPSV"
MASK_MAGIC = b"CPSM"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

CKPT_MAGIC = b"CPSCKPT\0"
CKPT_VERSION = 1

DATASET_FORMAT = "cpsinpaint-dataset"
DATASET_VERSION = 1


# ------------------------------------------------------------------ tensors

def video_bytes(video: np.ndarray) -> bytes:
    if video.ndim != 4:
        raise FormatError(f"video must be (T, H, W, C), got {video.shape}")
    T, H, W, C = video.shape
    payload = np.ascontiguousarray(np.moveaxis(video, 3, 0), dtype="<f4").tobytes()
    return _HEADER.pack(VIDEO_MAGIC, TENSOR_VERSION, T, H, W, C) + payload


def mask_bytes(mask: np.ndarray) -> bytes:
    if mask.ndim != 3:
        raise FormatError(f"mask must be (T, H, W), got {mask.shape}")
    T, H, W = mask.shape
    bits = np.packbits((np.asarray(mask) > 0).astype(np.uint8).ravel())
    return _HEADER.pack(MASK_MAGIC, TENSOR_VERSION, T, H, W, 1) + bits.tobytes()


def _parse(raw: bytes, magic: bytes, what: str) -> tuple[tuple[int, int, int, int], bytes]:
    if len(raw) < _HEADER.size:
        raise FormatError(f"{what}: file too short for header ({len(raw)} bytes)")
    got, version, T, H, W, C = _HEADER.unpack_from(raw)
    if got != magic:
        raise FormatError(f"{what}: bad magic {got!r}, expected {magic!r}")
    if version != TENSOR_VERSION:
        raise FormatError(f"{what}: unsupported version {version}")
    return (T, H, W, C), raw[_HEADER.size:]


def video_from_bytes(raw: bytes, what: str = "video") -> np.ndarray:
    (T, H, W, C), payload = _parse(raw, VIDEO_MAGIC, what)
    expected = 4 * T * H * W * C
    if len(payload) != expected:
        raise FormatError(f"{what}: payload has {len(payload)} bytes, expected {expected}")
    planar = np.frombuffer(payload, dtype="<f4").reshape(C, T, H, W)
    return np.ascontiguousarray(np.moveaxis(planar, 0, 3)).astype(np.float32)


def mask_from_bytes(raw: bytes, what: str = "mask") -> np.ndarray:
    (T, H, W, _), payload = _parse(raw, MASK_MAGIC, what)
    n = T * H * W
    if len(payload) != (n + 7) // 8:
        raise FormatError(f"{what}: payload has {len(payload)} bytes, expected {(n + 7) // 8}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n)
    return bits.reshape(T, H, W).astype(np.uint8)


def write_video(path, video: np.ndarray) -> None:
    Path(path).write_bytes(video_bytes(video))


def read_video(path) -> np.ndarray:
    return video_from_bytes(Path(path).read_bytes(), str(path))


def write_mask(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(mask_bytes(mask))


def read_mask(path) -> np.ndarray:
    return mask_from_bytes(Path(path).read_bytes(), str(path))


# ------------------------------------------------------------------ datasets

def write_dataset(directory, examples: list[Example]) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for ex in examples:
        T, H, W, C = ex.video.shape
        if ex.mask.shape != (T, H, W):
            raise FormatError(f"example {ex.id}: mask {ex.mask.shape} does not match video {ex.video.shape}")
        vname, mname = f"{ex.id}.cpsv", f"{ex.id}.cpsm"
        write_video(root / vname, ex.video)
        write_mask(root / mname, ex.mask)
        entries.append({
            "id": ex.id, "frames": T, "height": H, "width": W, "channels": C, "prompt": ex.prompt,
            "scene": asdict(ex.scene), "object": asdict(ex.obj), "video": vname, "mask": mname,
        })
    manifest = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "examples": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


def read_manifest(directory) -> list[dict]:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FormatError(f"{path} does not exist")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if manifest.get("format") != DATASET_FORMAT or manifest.get("version") != DATASET_VERSION:
        raise FormatError(f"{path}: not a {DATASET_FORMAT} v{DATASET_VERSION} manifest")
    return manifest["examples"]


def read_dataset(directory) -> list[Example]:
    root = Path(directory)
    out = []
    for e in read_manifest(root):
        video = read_video(root / e["video"])
        mask = read_mask(root / e["mask"])
        extents = (e["frames"], e["height"], e["width"], e["channels"])
        if video.shape != extents:
            raise FormatError(f"example {e['id']}: video {video.shape} disagrees with manifest {extents}")
        if mask.shape != extents[:3]:
            raise FormatError(f"example {e['id']}: mask {mask.shape} disagrees with manifest {extents[:3]}")
        out.append(Example(e["id"], video, mask, e["prompt"], SceneSpec(**e["scene"]), ObjectSpec(**e["object"])))
    return out


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path, config: dict, params: dict[str, np.ndarray], kind: str = "teacher", extra: dict | None = None) -> None:
    tensors, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": config, "kind": kind, "extra": extra or {}, "tensors": tensors}).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns ``(header, params)``; ``header`` carries ``config``, ``kind`` and ``extra``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = 16 + hlen
    try:
        header = json.loads(raw[16:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    payload = raw[start:]
    params = {}
    for t in header["tensors"]:
        end = t["offset"] + 4 * t["count"]
        if end > len(payload):
            raise FormatError(f"{path}: tensor {t['name']} runs past end of file")
        arr = np.frombuffer(payload[t["offset"]:end], dtype="<f4").astype(np.float32)
        params[t["name"]] = arr.reshape(t["shape"])
    return header, params
