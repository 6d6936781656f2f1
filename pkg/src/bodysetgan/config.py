"""Dataclass configs for every tunable knob, plus strict (de)serialization.

All run-level artifacts embed ``config_hash(cfg)`` so outputs can be traced
back to the exact configuration that produced them.  Parsing is strict:
unknown keys are rejected with :class:`ConfigError` before anything runs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Mapping, Optional

from .container import canonical_json, sha256_hex
from .errors import ConfigError

WORD_ORDERS = ("normal", "reversed", "shuffled")
COUNT_MODES = ("argmax", "expected")
DTYPES = ("float64", "float32")


@dataclass(frozen=True)
class ToyBodySpec:
    """Procedural body used when no real asset file is supplied."""

    num_vertices: int = 96
    num_joints: int = 6
    seed: int = 0


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 224
    # Soft-rasterizer edge sharpness (sigmoid slope on signed distance).
    sharpness: float = 30.0
    # Temperature of the per-pixel softmax over face depth.
    depth_temperature: float = 1e-2
    # Upper bound on pixel*face elements held in memory at once; faces are
    # chunked beyond it.  Chunking changes summation order, so this knob is
    # part of the config (fixed config -> bit-identical renders).
    pixel_face_budget: int = 4_000_000

    def validate(self) -> None:
        if self.resolution < 8:
            raise ConfigError("render resolution must be >= 8")
        if self.sharpness <= 0 or self.depth_temperature <= 0:
            raise ConfigError("sharpness and depth_temperature must be positive")
        if self.pixel_face_budget < 1:
            raise ConfigError("pixel_face_budget must be positive")


@dataclass(frozen=True)
class TextConfig:
    max_words: int = 17
    embed_dim: int = 256
    embedder_seed: int = 0


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 120
    word_feature_dim: int = 128
    encoder_hidden: int = 256
    attention_hidden: int = 128
    hidden_dim: int = 512
    leaky_slope: float = 0.2

    def validate(self) -> None:
        for name in ("latent_dim", "word_feature_dim", "encoder_hidden",
                     "attention_hidden", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"generator {name} must be positive")


@dataclass(frozen=True)
class ParamCriticConfig:
    hidden_dim: int = 512
    encoder_hidden: int = 512
    leaky_slope: float = 0.2


@dataclass(frozen=True)
class RenderCriticConfig:
    # Channel plan of the four stride-2 encoder stages (input is 3 channels);
    # a fifth stride-1 stage keeps the last width.
    channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    text_channels: int = 32
    # Hidden channels of the three recurrent convolutional cells.
    recurrent_channels: tuple[int, int, int] = (64, 64, 64)
    leaky_slope: float = 0.2


@dataclass(frozen=True)
class CountPredictorConfig:
    hidden_dim: int = 256


@dataclass(frozen=True)
class LossConfig:
    lipschitz_weight: float = 10.0
    critic_steps: int = 5

    def validate(self) -> None:
        if self.lipschitz_weight < 0:
            raise ConfigError("lipschitz_weight must be >= 0")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    critic_steps: int = 5
    epochs: int = 30
    batch_size: int = 16
    lipschitz_weight: float = 10.0
    seed: int = 0
    disable_critic2: bool = False
    word_order: str = "normal"
    word_order_seed: Optional[int] = None
    k_max: int = 3
    # When set, training stops after this many generator updates and the
    # epoch count only controls data shuffling.
    generator_steps: Optional[int] = None
    dtype: str = "float64"
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    grad_clip: Optional[float] = None
    checkpoint_every_epochs: int = 1
    assets_path: Optional[str] = None
    body: ToyBodySpec = field(default_factory=ToyBodySpec)
    render: RenderConfig = field(default_factory=RenderConfig)
    text: TextConfig = field(default_factory=TextConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    param_critic: ParamCriticConfig = field(default_factory=ParamCriticConfig)
    render_critic: RenderCriticConfig = field(default_factory=RenderCriticConfig)

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps must be >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.k_max < 1:
            raise ConfigError("epochs, batch_size and k_max must be positive")
        if self.lipschitz_weight < 0:
            raise ConfigError("lipschitz_weight must be >= 0")
        if self.word_order not in WORD_ORDERS:
            raise ConfigError(f"word_order must be one of {WORD_ORDERS}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")
        if self.generator_steps is not None and self.generator_steps < 1:
            raise ConfigError("generator_steps must be positive when set")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")
        self.render.validate()
        self.generator.validate()
        self.loss_config().validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(lipschitz_weight=self.lipschitz_weight,
                          critic_steps=self.critic_steps)


@dataclass(frozen=True)
class CountTrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 300
    seed: int = 0
    dtype: str = "float64"
    predictor: CountPredictorConfig = field(default_factory=CountPredictorConfig)

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ConfigError("count trainer needs positive learning_rate and epochs")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")


@dataclass(frozen=True)
class EvalConfig:
    sample_n: int = 400
    seed: int = 0
    count_mode: str = "argmax"
    spaces: tuple[str, ...] = ("param", "uv")
    # UV-space costs render at this resolution (defaults to the training
    # renderer resolution when None).
    uv_resolution: Optional[int] = None

    def validate(self) -> None:
        if self.sample_n < 1:
            raise ConfigError("sample_n must be positive")
        if self.count_mode not in COUNT_MODES:
            raise ConfigError(f"count_mode must be one of {COUNT_MODES}")
        for space in self.spaces:
            if space not in ("param", "uv"):
                raise ConfigError(f"unknown metric space {space!r}")
        if not self.spaces:
            raise ConfigError("at least one metric space is required")


@dataclass(frozen=True)
class ActivityClass:
    name: str
    # Template with {count} and {activity} slots; {count} is spelled out.
    caption_template: str = "{count} people {activity}"
    caption_template_single: str = "one person {activity}"


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[ActivityClass, ...] = (
        ActivityClass("standing"),
        ActivityClass("running together"),
        ActivityClass("sitting on a bench"),
    )
    k_max: int = 3
    pose_range: float = 0.7
    shape_range: float = 1.2
    pose_noise: float = 0.05
    shape_noise: float = 0.08
    camera_scale: float = 0.35
    camera_noise: float = 0.03
    camera_spread: float = 1.2
    val_fraction: float = 0.1
    text: TextConfig = field(default_factory=TextConfig)

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ConfigError("synthetic spec needs at least 2 activity classes")
        if not (1 <= self.k_max <= 8):
            raise ConfigError("synthetic k_max must be in [1, 8]")
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigError("val_fraction must be in (0, 1)")
        for cls in self.classes:
            if "{activity}" not in cls.caption_template:
                raise ConfigError(f"class {cls.name!r}: template lacks an {{activity}} slot")
            if "{count}" not in cls.caption_template:
                raise ConfigError(f"class {cls.name!r}: template lacks a {{count}} slot")


def to_dict(cfg: Any) -> dict:
    """Dataclass -> plain dict (tuples become lists)."""
    if not is_dataclass(cfg):
        raise TypeError(f"not a config dataclass: {type(cfg)}")
    return dataclasses.asdict(cfg)


def _coerce(hint: Any, value: Any, path: str) -> Any:
    import typing

    if is_dataclass(hint):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{path}: expected a mapping for {hint.__name__}")
        return from_dict(hint, value, path)
    origin = typing.get_origin(hint)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is typing.Union:
        if value is None:
            if type(None) in typing.get_args(hint):
                return None
            raise ConfigError(f"{path}: null is not allowed")
        inner = [a for a in typing.get_args(hint) if a is not type(None)]
        return _coerce(inner[0], value, path)
    if hint is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if hint is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def from_dict(cls: type, data: Mapping, path: str = "") -> Any:
    """Strictly parse ``data`` into dataclass ``cls`` (unknown keys rejected)."""
    import typing

    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {unknown}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name in known:
        if name in data:
            kwargs[name] = _coerce(hints[name], data[name], f"{path}.{name}" if path else name)
    return cls(**kwargs)


def config_hash(cfg: Any) -> str:
    """Stable hex digest of a fully-resolved config."""
    return sha256_hex(canonical_json({"type": type(cfg).__name__, "config": to_dict(cfg)}))
