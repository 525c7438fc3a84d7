"""Flat key/value run configuration (TOML) shared by training, distillation and the CLI.

Every key belongs to exactly one of the codec, denoiser or flow sections; see
``KEYS`` for the full list and the README for their meaning.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from cpsinpaint.codec import CodecConfig
from cpsinpaint.denoiser import DenoiserConfig
from cpsinpaint.errors import ConfigError
from cpsinpaint.flow import FlowConfig

CODEC_KEYS = ("s_t", "s_h", "s_w", "c_lat", "channels", "projection_seed")
MODEL_KEYS = ("d_model", "n_heads", "depth", "patch", "d_txt", "n_txt", "max_f", "mlp_ratio", "freq_dim", "skip")
FLOW_KEYS = tuple(f.name for f in dataclasses.fields(FlowConfig))
KEYS = CODEC_KEYS + MODEL_KEYS + FLOW_KEYS


@dataclass(frozen=True)
class RunConfig:
    codec: CodecConfig = field(default_factory=CodecConfig.toy)
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)

    def to_flat(self) -> dict:
        out = {k: getattr(self.codec, k) for k in CODEC_KEYS}
        out.update({k: getattr(self.model, k) for k in MODEL_KEYS})
        out.update({k: getattr(self.flow, k) for k in FLOW_KEYS})
        out["patch"] = list(out["patch"])
        out["frame_step_range"] = list(out["frame_step_range"])
        return out


def from_flat(values: dict, guidance: bool = False) -> RunConfig:
    unknown = set(values) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        codec = CodecConfig.toy(**{k: values[k] for k in CODEC_KEYS if k in values})
        model_kw = {k: values[k] for k in MODEL_KEYS if k in values}
        if "patch" in model_kw:
            model_kw["patch"] = tuple(model_kw["patch"])
        model = DenoiserConfig(c_lat=codec.c_lat, guidance=guidance, **model_kw)
        flow_kw = {k: values[k] for k in FLOW_KEYS if k in values}
        if "frame_step_range" in flow_kw:
            flow_kw["frame_step_range"] = tuple(flow_kw["frame_step_range"])
        flow = FlowConfig(**flow_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(codec, model, flow)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        values = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config is flat key = value; found tables {nested}")
    return from_flat(values)


def dump_config(run: RunConfig) -> str:
    lines = []
    for k, v in run.to_flat().items():
        if isinstance(v, bool):
            lines.append(f"{k} = {'true' if v else 'false'}")
        elif isinstance(v, (list, tuple)):
            lines.append(f"{k} = [{', '.join(str(x) for x in v)}]")
        else:
            lines.append(f"{k} = {v!r}")
    return "\n".join(lines) + "\n"
