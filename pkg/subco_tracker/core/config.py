"""Configuration dataclasses and the YAML run-config document."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from subco_tracker.core.exceptions import ConfigError

logger = logging.getLogger(__name__)


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {value}")


def _check_range(name: str, value) -> Tuple[float, float]:
    low, high = value
    if low > high:
        raise ConfigError(f"{name} must be (low, high) with low <= high, got {value}")
    return (low, high)


@dataclass
class SyntheticConfig:
    """Synthetic scene and simulated detector.

    Objects are colored rectangles moving at constant velocity (plus jitter)
    that bounce off the image border; occluders are larger gray rectangles
    drawn on top of them.
    """
    num_objects: int = 5
    num_frames: int = 40
    image_size: Tuple[int, int] = (320, 240)
    object_size_range: Tuple[int, int] = (16, 40)
    speed_range: Tuple[float, float] = (1.0, 4.0)
    occluder_count: int = 1
    appearance_noise: float = 6.0
    detector_dropout: float = 0.05
    clutter_rate: float = 0.3
    seed: int = 0
    brightness_ramp: float = 0.0
    box_noise: float = 1.0
    occlusion_drop_threshold: float = 0.7
    jitter: float = 0.5
    brightness_flicker: float = 0.0  # std of the log of a per-object, per-frame brightness factor

    @classmethod
    def preset(cls, name: str, **overrides) -> "SyntheticConfig":
        """A named scene from SYNTHETIC_PRESETS with ``overrides`` applied on top."""
        if name not in SYNTHETIC_PRESETS:
            raise ConfigError(f"Unknown synthetic preset {name!r}; choose from {sorted(SYNTHETIC_PRESETS)}")
        return cls(**{**SYNTHETIC_PRESETS[name], **overrides})

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.object_size_range = tuple(int(v) for v in _check_range("object_size_range", self.object_size_range))
        self.speed_range = tuple(float(v) for v in _check_range("speed_range", self.speed_range))
        if self.num_objects < 1:
            raise ConfigError(f"num_objects must be >= 1, got {self.num_objects}")
        if self.num_frames < 2:
            raise ConfigError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.object_size_range[0] < 2:
            raise ConfigError("object_size_range must start at 2 pixels or more")
        if self.occluder_count < 0 or self.clutter_rate < 0:
            raise ConfigError("occluder_count and clutter_rate must be non-negative")
        if self.appearance_noise < 0 or self.box_noise < 0 or self.jitter < 0 or self.brightness_flicker < 0:
            raise ConfigError("noise levels must be non-negative")
        _check_unit("detector_dropout", self.detector_dropout)
        _check_unit("occlusion_drop_threshold", self.occlusion_drop_threshold)


SYNTHETIC_PRESETS: Dict[str, Dict[str, Any]] = {
    # Small fast objects on wobbly paths that spend many frames behind
    # occluders; only boxes at most 30% covered are detected.
    "occlusion_heavy": dict(num_objects=6, num_frames=60, occluder_count=6, object_size_range=(14, 24),
                            speed_range=(3.0, 6.0), jitter=2.0, occlusion_drop_threshold=0.3, clutter_rate=0.1),
    # Every object changes brightness from frame to frame on its own.
    "flicker": dict(num_objects=5, occluder_count=0, brightness_flicker=0.3, clutter_rate=0.1),
}


@dataclass
class DatasetConfig:
    """How sequences are generated and cut into training windows."""
    num_train_sequences: int = 30
    num_val_sequences: int = 5
    window_stride: Optional[int] = None  # defaults to the window length (no overlap)
    frame_stride: int = 1
    min_confidence: float = 0.2

    def __post_init__(self):
        if self.num_train_sequences < 0 or self.num_val_sequences < 0:
            raise ConfigError("sequence counts must be non-negative")
        if self.window_stride is not None and self.window_stride < 1:
            raise ConfigError(f"window_stride must be >= 1, got {self.window_stride}")
        if self.frame_stride < 1:
            raise ConfigError(f"frame_stride must be >= 1, got {self.frame_stride}")
        _check_unit("min_confidence", self.min_confidence)


@dataclass
class EmbedderConfig:
    patch_size: Tuple[int, int] = (16, 16)
    hidden: int = 64
    dim: int = 32
    l2_normalize: bool = True

    def __post_init__(self):
        self.patch_size = tuple(int(v) for v in self.patch_size)
        if len(self.patch_size) != 2 or min(self.patch_size) < 1:
            raise ConfigError(f"patch_size must be two positive integers, got {self.patch_size}")
        if self.hidden < 1 or self.dim < 1:
            raise ConfigError("hidden and dim must be positive")

    @property
    def input_dim(self) -> int:
        return self.patch_size[0] * self.patch_size[1] * 3


@dataclass
class AssignmentConfig:
    delta_match: float = 0.5
    tau: float = 10.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


@dataclass
class LossConfig:
    sequence_length: int = 8
    delta_match: float = 0.5
    tau: float = 10.0
    intra_weight: float = 1.0
    deletion_threshold: float = 0.5
    epsilon_log: float = 1e-8
    use_inter: bool = True

    def __post_init__(self):
        if self.sequence_length < 2:
            raise ConfigError(f"sequence_length must be >= 2, got {self.sequence_length}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.intra_weight < 0:
            raise ConfigError(f"intra_weight must be >= 0, got {self.intra_weight}")
        if not 0.0 < self.deletion_threshold < 1.0:
            raise ConfigError(f"deletion_threshold must be in (0, 1), got {self.deletion_threshold}")
        if self.epsilon_log < 0:
            raise ConfigError("epsilon_log must be non-negative")
        if not self.use_inter and self.intra_weight == 0:
            raise ConfigError("with the inter-frame term disabled the intra-frame weight must be positive")

    def assignment(self) -> AssignmentConfig:
        return AssignmentConfig(delta_match=self.delta_match, tau=self.tau)


@dataclass
class OptimizerConfig:
    """AdamW with a single step decay of the learning rate."""
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    epochs: int = 20
    lr_decay_epoch: int = 12  # 1-based epoch from which the decayed rate applies
    lr_decay_factor: float = 0.1
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate of a 1-based epoch."""
        if self.lr_decay_epoch and epoch >= self.lr_decay_epoch:
            return self.lr * self.lr_decay_factor
        return self.lr


class CostMode(str, Enum):
    IOU = "iou"
    REID = "reid"
    COMBINED = "combined"


@dataclass
class TrackerConfig:
    high_thresh: float = 0.6
    low_thresh: float = 0.1
    new_track_thresh: float = 0.7
    omega_reid: float = 0.5
    match_iou_min: float = 0.1
    max_age: int = 30
    ema_alpha: float = 0.9
    stage_costs: Tuple[CostMode, CostMode] = (CostMode.COMBINED, CostMode.COMBINED)
    min_hits: int = 2
    reid_min_similarity: float = 0.5
    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160

    def __post_init__(self):
        try:
            self.stage_costs = tuple(CostMode(c) for c in self.stage_costs)
        except ValueError as e:
            raise ConfigError(f"stage_costs entries must be one of iou, reid, combined: {e}") from e
        if len(self.stage_costs) != 2:
            raise ConfigError(f"stage_costs needs one mode per association stage, got {self.stage_costs}")
        for name in ("high_thresh", "low_thresh", "new_track_thresh", "match_iou_min", "ema_alpha"):
            _check_unit(name, getattr(self, name))
        if not self.low_thresh < self.high_thresh:
            raise ConfigError(f"low_thresh ({self.low_thresh}) must be below high_thresh ({self.high_thresh})")
        if self.omega_reid < 0:
            raise ConfigError(f"omega_reid must be >= 0, got {self.omega_reid}")
        if self.max_age < 0 or self.min_hits < 1:
            raise ConfigError("max_age must be >= 0 and min_hits >= 1")


@dataclass
class PathsConfig:
    data: str = "data"
    out: str = "runs"


_SECTIONS = {
    "paths": PathsConfig,
    "synthetic": SyntheticConfig,
    "dataset": DatasetConfig,
    "embedder": EmbedderConfig,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "tracker": TrackerConfig,
}


def _yaml_safe(value: Any) -> Any:
    """Recursively convert enums and tuples into YAML-serializable primitives."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _yaml_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_yaml_safe(v) for v in value]
    return value


def section_from_dict(cls, data: Optional[Dict[str, Any]], prefix: str):
    """Builds one config dataclass, rejecting keys it does not define."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError("Unknown config key(s): " + ", ".join(f"{prefix}.{k}" for k in unknown))
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix}: {e}") from e


def _with_preset(section: str, data: Any) -> Any:
    """Expands ``synthetic.preset`` into the preset's values; the section's other keys override them."""
    if section != "synthetic" or not isinstance(data, dict) or "preset" not in data:
        return data
    data = dict(data)
    name = data.pop("preset")
    if name not in SYNTHETIC_PRESETS:
        raise ConfigError(f"synthetic.preset: unknown preset {name!r}; choose from {sorted(SYNTHETIC_PRESETS)}")
    return {**SYNTHETIC_PRESETS[name], **data}


@dataclass
class RunConfig:
    """The whole configuration of a run; every command writes the resolved copy next to its outputs."""
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "RunConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("The config document must be a mapping")
        unknown = sorted(set(data) - set(_SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError("Unknown config key(s): " + ", ".join(unknown))
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError(f"seed must be an integer, got {seed!r}")
        sections = {name: section_from_dict(section_cls, _with_preset(name, data.get(name)), name)
                    for name, section_cls in _SECTIONS.items()}
        return cls(seed=seed, **sections)

    def to_dict(self) -> Dict[str, Any]:
        return _yaml_safe(asdict(self))

    def export_yaml(self, yaml_file) -> Path:
        out_path = Path(yaml_file)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with out_path.open("w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        return out_path

    @classmethod
    def import_yaml(cls, yaml_file) -> "RunConfig":
        path = Path(yaml_file)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        with path.open("r", encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        logger.debug(f"Loaded config from {path}")
        return cls.from_dict(data)
