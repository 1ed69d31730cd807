"""Configuration loading, validation and serialization.

The config file is UTF-8 JSON with five nested sections: ``model``,
``training``, ``data``, ``render`` and ``service``. Every key has a default;
an empty file yields the all-defaults config. Unknown keys are rejected with
an error naming the key, as are values violating cross-field invariants
(e.g. more semantic groups than fine classes).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# Default fine-class -> group assignment for the 19-class face mask layout
# (background, skin, nose, eye glasses, eyes, brows, ears, mouth, lips, hair,
#  hat, earring, necklace, neck, cloth). Groups: 0 background, 1 face,
#  2 hair, 3 garment.
CELEBAMASK_CLUBBING = [0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 0, 0, 0, 1, 3]

GROUP_NAMES = ("background", "face", "hair", "garment")


@dataclass
class MappingConfig:
    """Latent-to-FiLM mapping network shape."""

    depth: int = 3
    width: int = 128


@dataclass
class ModelConfig:
    latent_dim: int = 128            # d
    num_classes: int = 4             # fine semantic classes emitted by the geometry head
    num_groups: int = 4              # coarse semantic groups consumed by the appearance net
    clubbing: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    background_class: int = 0        # fine label composited into empty rays
    num_levels: int = 8              # K isosurfaces
    level_low: float = 0.15
    level_high: float = 0.85
    coarse_samples: int = 32
    feature_dim: int = 64            # appearance descriptor width
    geometry_depth: int = 4
    geometry_width: int = 64
    appearance_depth: int = 4
    appearance_width: int = 64
    field_depth: int = 3
    field_width: int = 32
    mapping: MappingConfig = field(default_factory=MappingConfig)
    view_dependent_descriptor: bool = False
    appearance_sharing: str = "proposed"  # proposed | none | full


@dataclass
class PosePrior:
    """Gaussian prior over (pitch, yaw, roll) in radians, clamped to range."""

    pitch_mean: float = 0.0
    pitch_std: float = 0.1
    yaw_mean: float = 0.0
    yaw_std: float = 0.3
    roll_mean: float = 0.0
    roll_std: float = 0.0


@dataclass
class InversionConfig:
    lambda_sem: float = 10.0
    lambda_im: float = 1.0
    lambda_vgg: float = 1.0
    lr: float = 1e-2
    steps: int = 500


@dataclass
class TrainingConfig:
    batch_size: int = 4
    stage1_steps: int = 2000
    stage2_steps: int = 500
    lr_generator: float = 2e-5
    lr_discriminator: float = 2e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.9
    lambda_im: float = 5.0           # R1 weight on the image discriminator
    lambda_sem: float = 1.0          # R1 weight on the semantic discriminator
    lambda_pose: float = 10.0
    lambda_latent: float = 1.0
    stage2_lambda_im: float = 1.0
    checkpoint_every: int = 500
    seed: int = 0
    pose_prior: PosePrior = field(default_factory=PosePrior)
    mixed_precision: bool = False    # accepted but unused at desk scale
    inversion: InversionConfig = field(default_factory=InversionConfig)


@dataclass
class SyntheticConfig:
    count: int = 256
    head_radius: float = 0.18
    jitter: float = 0.25             # relative randomization of shape/color params
    seed: int = 0


@dataclass
class DataConfig:
    root: str = ""
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class RenderConfig:
    width: int = 32
    height: int = 32
    fov_deg: float = 34.0
    orbit_radius: float = 1.0
    near: float = 0.5
    far: float = 1.5


@dataclass
class ServiceConfig:
    data_dir: str = "sfe_data"
    port: int = 8777


@dataclass
class TrainConfig:
    """Root configuration shared by every subsystem."""

    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)


_SECTION_TYPES = {
    "model": ModelConfig,
    "training": TrainingConfig,
    "data": DataConfig,
    "render": RenderConfig,
    "service": ServiceConfig,
}

_NESTED_TYPES = {
    "mapping": MappingConfig,
    "pose_prior": PosePrior,
    "inversion": InversionConfig,
    "synthetic": SyntheticConfig,
}


def _build_dataclass(cls, data: dict, prefix: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in fields:
            raise ConfigError(f"unknown config key '{path}'", key=path)
        ftype = fields[key].type
        if key in _NESTED_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"'{path}' must be an object", key=path)
            kwargs[key] = _build_dataclass(_NESTED_TYPES[key], value, path)
            continue
        kwargs[key] = _coerce_scalar(path, ftype, value)
    return cls(**kwargs)


def _coerce_scalar(path: str, ftype: str, value):
    # dataclass field types arrive as strings under `from __future__ import
    # annotations`; only a handful of shapes occur here.
    if ftype == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer", key=path)
        return value
    if ftype == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number", key=path)
        return float(value)
    if ftype == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' must be a boolean", key=path)
        return value
    if ftype == "str":
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string", key=path)
        return value
    if ftype == "list[int]":
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"'{path}' must be a list of integers", key=path)
        return list(value)
    raise ConfigError(f"'{path}' has unsupported type", key=path)


def parse_config(data: dict) -> TrainConfig:
    """Build and validate a TrainConfig from a parsed JSON object."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    sections = {}
    for key, value in data.items():
        if key not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section '{key}'", key=key)
        if not isinstance(value, dict):
            raise ConfigError(f"section '{key}' must be an object", key=key)
        sections[key] = _build_dataclass(_SECTION_TYPES[key], value, key)
    cfg = TrainConfig(**sections)
    validate_config(cfg)
    return cfg


def validate_config(cfg: TrainConfig) -> None:
    """Check cross-field invariants; raises ConfigError naming the key."""
    m, t, r = cfg.model, cfg.training, cfg.render

    def positive(value, key):
        if value < 1:
            raise ConfigError(f"'{key}' must be >= 1 (got {value})", key=key)

    positive(m.latent_dim, "model.latent_dim")
    positive(m.num_classes, "model.num_classes")
    positive(m.num_groups, "model.num_groups")
    positive(m.num_levels, "model.num_levels")
    positive(m.feature_dim, "model.feature_dim")
    positive(m.geometry_depth, "model.geometry_depth")
    positive(m.appearance_depth, "model.appearance_depth")
    positive(m.field_depth, "model.field_depth")
    positive(r.width, "render.width")
    positive(r.height, "render.height")
    positive(t.batch_size, "training.batch_size")
    if m.coarse_samples < 2:
        raise ConfigError("'model.coarse_samples' must be >= 2", key="model.coarse_samples")
    if m.num_groups > m.num_classes:
        raise ConfigError(
            f"n exceeds N_cls: 'model.num_groups' ({m.num_groups}) must not exceed "
            f"'model.num_classes' ({m.num_classes})",
            key="model.num_groups",
        )
    if len(m.clubbing) != m.num_classes:
        raise ConfigError(
            f"'model.clubbing' must list one group per fine class "
            f"({m.num_classes} entries, got {len(m.clubbing)})",
            key="model.clubbing",
        )
    if any(g < 0 or g >= m.num_groups for g in m.clubbing):
        raise ConfigError(
            "'model.clubbing' entries must be group indices < num_groups",
            key="model.clubbing",
        )
    if not 0 <= m.background_class < m.num_classes:
        raise ConfigError(
            "'model.background_class' must be a fine class index",
            key="model.background_class",
        )
    if m.appearance_sharing not in ("proposed", "none", "full"):
        raise ConfigError(
            "'model.appearance_sharing' must be one of proposed|none|full",
            key="model.appearance_sharing",
        )
    if not m.level_low < m.level_high:
        raise ConfigError("'model.level_low' must be < level_high", key="model.level_low")
    if not (0.0 < m.level_low and m.level_high < 1.0):
        raise ConfigError(
            "'model.level_low'/'model.level_high' must lie inside (0, 1)",
            key="model.level_low",
        )
    if not r.near < r.far:
        raise ConfigError("'render.near' must be < render.far", key="render.near")
    for key in ("lambda_im", "lambda_sem", "lambda_pose", "lambda_latent", "stage2_lambda_im"):
        if getattr(t, key) < 0:
            raise ConfigError(f"'training.{key}' must be >= 0", key=f"training.{key}")
    for key in ("lambda_sem", "lambda_im", "lambda_vgg"):
        if getattr(t.inversion, key) < 0:
            raise ConfigError(
                f"'training.inversion.{key}' must be >= 0", key=f"training.inversion.{key}"
            )
    prior = t.pose_prior
    for key in ("pitch_mean", "pitch_std", "yaw_mean", "yaw_std", "roll_mean", "roll_std"):
        value = getattr(prior, key)
        if not math.isfinite(value):
            raise ConfigError(f"'training.pose_prior.{key}' must be finite", key=f"training.pose_prior.{key}")
    for key in ("pitch_std", "yaw_std", "roll_std"):
        if getattr(prior, key) < 0:
            raise ConfigError(f"'training.pose_prior.{key}' must be >= 0", key=f"training.pose_prior.{key}")


def load_config(path: str | Path) -> TrainConfig:
    """Load a config file; an empty file yields the all-defaults config."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        cfg = TrainConfig()
        validate_config(cfg)
        return cfg
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")


def serialize_config(cfg: TrainConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def config_from_dict(data: dict) -> TrainConfig:
    return parse_config(data)


def desk_config() -> TrainConfig:
    """The default desk-scale profile (identical to all-defaults)."""
    return TrainConfig()


def full_config() -> TrainConfig:
    """Full-scale profile mirroring the published training setup."""
    cfg = TrainConfig()
    cfg.model.latent_dim = 256
    cfg.model.num_classes = 19
    cfg.model.clubbing = list(CELEBAMASK_CLUBBING)
    cfg.model.num_levels = 24
    cfg.model.coarse_samples = 64
    cfg.model.geometry_depth = 8
    cfg.model.geometry_width = 256
    cfg.model.appearance_depth = 8
    cfg.model.appearance_width = 256
    cfg.model.feature_dim = 256
    cfg.render.width = 256
    cfg.render.height = 256
    cfg.training.stage1_steps = 120_000
    cfg.training.stage2_steps = 30_000
    validate_config(cfg)
    return cfg
