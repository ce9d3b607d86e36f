"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored, keys may appear in any order,
and unknown keys are rejected. Tuple-valued keys take comma-separated
integers; an empty value means "derive the default".
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Optional

from pgbn.errors import ConfigurationError
from pgbn.networks import ModelDims
from pgbn.training import TrainConfig


@dataclass
class RunConfig:
    # model
    bars: int = 4
    steps: int = 96
    pitches: int = 84
    tracks: int = 8
    latent: int = 128
    refiner_channels: int = 64
    time_factors: Optional[tuple] = None
    pitch_factors: Optional[tuple] = None
    # optimization
    batch_size: int = 32
    epochs_per_phase: int = 2
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    gp_lambda: float = 10.0
    critic_steps: int = 5
    seed: int = 0
    anneal_factor: float = 1.1
    initial_slope: float = 1.0
    dtype: str = "float32"
    # data
    dataset: str = ""
    synthetic_count: int = 0
    synthetic_seed: int = 0
    # output
    out: str = "run"
    checkpoint_every: int = 1
    last_phase: int = 0
    samples: int = 4

    def model_dims(self) -> ModelDims:
        return ModelDims(
            bars=self.bars, steps=self.steps, pitches=self.pitches, tracks=self.tracks,
            latent=self.latent, refiner_channels=self.refiner_channels,
            time_factors=self.time_factors, pitch_factors=self.pitch_factors,
        )

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def validate(self) -> None:
        """Raise :class:`ConfigurationError` for inconsistent settings."""
        self.model_dims()
        self.train_config()
        if not self.dataset and self.synthetic_count < 1:
            raise ConfigurationError("set either dataset or synthetic_count")
        if self.checkpoint_every < 0 or self.samples < 0 or self.last_phase < 0:
            raise ConfigurationError("checkpoint_every, samples and last_phase must be >= 0")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "Optional[tuple]":
            return tuple(int(x) for x in raw.split(",") if x.strip()) or None
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))
