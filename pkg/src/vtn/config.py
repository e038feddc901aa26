"""Configuration records and the flat ``key=value`` run-config format.

A run config is a text file of ``section.field=value`` lines covering the
model, training, data and inference records. Comments start with ``#``.
Unknown keys are errors; serialization is canonical (sorted, every field).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

BACKBONES = ("linear_patch", "tiny_conv")
PE_MODES = ("learned", "sinusoidal", "none")
ATTENTION_MODES = ("learned", "uniform")
SCHEDULES = ("step", "cosine")
OPTIMIZERS = ("sgd", "adam")
PROTOCOLS = ("full", "multiview", "chunked", "features")
TASKS = ("order", "presence")


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    num_layers: int = 1
    num_heads: int = 2
    hidden_size: int = 32
    ffn_size: int = 64
    window: int = 32
    attention_dropout: float = 0.1
    pe_mode: str = "learned"
    attention_mode: str = "learned"
    max_position: int = 1024

    def validate(self) -> None:
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.num_heads < 1 or self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} is not divisible by "
                              f"num_heads {self.num_heads}")
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"window must be even and >= 2, got {self.window}")
        if not 0.0 <= self.attention_dropout < 1.0:
            raise ConfigError("attention_dropout must lie in [0, 1)")
        if self.pe_mode not in PE_MODES:
            raise ConfigError(f"pe_mode must be one of {PE_MODES}, got {self.pe_mode!r}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.max_position < 1:
            raise ConfigError("max_position must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


@dataclass
class HeadConfig:
    d: int = 32
    d_mlp: int = 32
    num_classes: int = 2
    dropout: float = 0.1

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.d < 1 or self.d_mlp < 1:
            raise ConfigError("head widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("head dropout must lie in [0, 1)")


@dataclass
class ModelConfig:
    backbone: str = "linear_patch"
    in_channels: int = 1
    frame_size: int = 28
    patch_size: int = 4
    conv_channels: tuple = (8, 16)
    conv_groups: int = 2
    d_model: int = 32
    num_layers: int = 1
    num_heads: int = 2
    d_ffn: int = 64
    window: int = 32
    attention_dropout: float = 0.1
    pe_mode: str = "learned"
    attention_mode: str = "learned"
    max_position: int = 1024
    d_mlp: int = 0  # 0 means d_model
    head_dropout: float = 0.1
    num_classes: int = 2
    init_seed: int = 0
    init_std: float = 0.0  # 0 means width-scaled, see resolved_init_std

    def resolved_init_std(self) -> float:
        """Std of the normal init for encoder and head weights.

        0.02 at width 768; narrower models keep the same per-matrix gain
        (std * sqrt(width)) unless ``init_std`` is set explicitly.
        """
        if self.init_std > 0:
            return self.init_std
        return 0.02 * (768.0 / self.d_model) ** 0.5

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.num_layers, self.num_heads, self.d_model, self.d_ffn, self.window,
                             self.attention_dropout, self.pe_mode, self.attention_mode,
                             self.max_position)

    def head(self) -> HeadConfig:
        return HeadConfig(self.d_model, self.d_mlp or self.d_model, self.num_classes, self.head_dropout)

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.backbone == "linear_patch" and self.frame_size % self.patch_size:
            raise ConfigError(f"frame_size {self.frame_size} is not divisible by "
                              f"patch_size {self.patch_size}")
        if self.backbone == "tiny_conv":
            if not self.conv_channels:
                raise ConfigError("tiny_conv needs at least one conv layer")
            for c in self.conv_channels:
                if c % self.conv_groups:
                    raise ConfigError(f"conv width {c} is not divisible by {self.conv_groups} groups")
        self.encoder().validate()
        self.head().validate()


@dataclass
class TrainConfig:
    lr: float = 1e-3
    optimizer: str = "sgd"  # the desk preset switches to adam, see desk_train_config
    schedule: str = "step"
    step_milestones: tuple = (0.6, 0.85)
    step_gamma: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    frozen_backbone: bool = False
    footprint_seconds: float = 2.56
    frames_per_clip: int = 16
    scale_min: int = 32
    scale_max: int = 40
    hflip_prob: float = 0.5
    val_protocol: str = "full"

    def validate(self) -> None:
        if not self.lr >= 0.0:
            raise ConfigError("lr must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.val_protocol not in PROTOCOLS:
            raise ConfigError(f"val_protocol must be one of {PROTOCOLS}")
        if self.scale_min > self.scale_max:
            raise ConfigError("scale_min exceeds scale_max")


@dataclass
class SynthTaskSpec:
    task: str = "order"
    num_classes: int = 2
    frames_per_video: int = 16
    frame_size: int = 32
    channels: int = 1
    glyph_size: int = 12
    marker_span: int = 4
    noise: float = 0.1
    distractor_prob: float = 0.0
    fps: float = 6.25
    num_train: int = 500
    num_val: int = 200
    seed: int = 0

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "order" and self.num_classes != 2:
            raise ConfigError("the order task has exactly 2 classes")
        if self.task == "presence" and self.num_classes < 2:
            raise ConfigError("the presence task needs >= 2 classes")
        if self.marker_span < 1:
            raise ConfigError("marker_span must be >= 1")
        if self.task == "order" and self.frames_per_video < 2 * self.marker_span:
            raise ConfigError("the order task needs frames_per_video >= 2 * marker_span")
        if self.marker_span > self.frames_per_video:
            raise ConfigError("marker_span exceeds frames_per_video")
        if self.glyph_size > self.frame_size:
            raise ConfigError("glyph larger than frame")
        if self.noise < 0 or not 0.0 <= self.distractor_prob <= 1.0:
            raise ConfigError("noise must be >= 0 and distractor_prob in [0, 1]")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")


@dataclass
class InferenceConfig:
    protocol: str = "full"
    full_video_frames: int = 16
    num_clips: int = 10
    num_crops: int = 3
    frames_per_view: int = 16
    footprint_seconds: float = 2.56
    chunk_size: int = 7
    resize: int = 32

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if min(self.full_video_frames, self.num_clips, self.num_crops, self.frames_per_view) < 1:
            raise ConfigError("frame and view counts must be >= 1")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")


def desk_train_config() -> TrainConfig:
    """Training preset for the synthetic desk tasks.

    Plain SGD stalls on the order task for far longer than 30 epochs at this
    scale, so the preset uses Adam at the same learning rate.
    """
    return TrainConfig(optimizer="adam")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=desk_train_config)
    data: SynthTaskSpec = field(default_factory=SynthTaskSpec)
    infer: InferenceConfig = field(default_factory=InferenceConfig)

    def validate(self) -> None:
        for section in _SECTIONS:
            getattr(self, section).validate()
        if self.model.num_classes != self.data.num_classes:
            raise ConfigError("model.num_classes differs from data.num_classes")

    def to_text(self) -> str:
        return serialize(self)


_SECTIONS = ("model", "train", "data", "infer")


def _field_types(record) -> dict[str, Any]:
    return {f.name: type(f.default) if f.default is not dataclasses.MISSING else None
            for f in dataclasses.fields(record)}


def _parse_value(key: str, raw: str, kind) -> Any:
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            parts = [p for p in raw.split(",") if p.strip()]
            return tuple(float(p) if "." in p or "e" in p.lower() else int(p) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    for key, raw in items.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        record = getattr(cfg, section)
        kinds = _field_types(record)
        if name not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(record, name, _parse_value(key, raw, kinds[name]))
    return cfg


def parse(text: str) -> RunConfig:
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return apply_overrides(RunConfig(), items)


def serialize(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        record = getattr(cfg, section)
        for f in dataclasses.fields(record):
            lines.append(f"{section}.{f.name}={_format_value(getattr(record, f.name))}")
    return "\n".join(sorted(lines)) + "\n"


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def model_config_to_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["conv_channels"] = list(cfg.conv_channels)
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown model config key {sorted(extra)[0]!r}")
    d = dict(d)
    if "conv_channels" in d:
        d["conv_channels"] = tuple(d["conv_channels"])
    return ModelConfig(**d)
