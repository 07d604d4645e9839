"""Run configuration schema and the flat ``section.field=value`` loader.

Config files are python-dotenv documents whose keys are dotted section keys::

    # desk run
    reg.mode=adaptive
    model.channels=8,16,32

Unknown sections or fields are rejected so that defaults never drift silently.
"""

from typing import Annotated, Any, Dict, Literal, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator, model_validator

from adareg.utils.exceptions import ConfigError

CATEGORIES = ('conv_kernel', 'conv_bias', 'bn_gamma', 'bn_beta', 'dense_kernel')
REG_MODES = ('adaptive', 'constant', 'unconstrained', 'off')
PROTOCOLS = ('same_cam_same_id', 'same_cam')


def _split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(',') if part.strip())
    return value


IntList = Annotated[Tuple[int, ...], BeforeValidator(_split_csv)]
FloatPair = Annotated[Tuple[float, float], BeforeValidator(_split_csv)]


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class DataConfig(_Section):
    """Synthetic dataset generation (GenConfig)."""
    num_train_ids: int = Field(12, ge=2)
    num_test_ids: int = Field(8, ge=1)
    cameras: int = Field(3, description="Number of cameras; every identity is seen by all of them")
    samples_per_id_per_camera: int = Field(4, ge=2)
    height: int = Field(32, ge=1)
    width: int = Field(16, ge=1)
    latent_dim: int = Field(8, ge=1, le=16)
    camera_strength: float = Field(0.3, ge=0.0)
    noise: float = Field(0.05, ge=0.0)
    difficulty: Literal['easy', 'hard'] = 'easy'
    seed: int = Field(0, ge=0)

    @field_validator('cameras')
    @classmethod
    def _at_least_two_cameras(cls, v: int) -> int:
        if v < 2:
            raise ValueError("cameras must be >= 2 so every test identity appears in at least two cameras")
        return v


class ModelConfig(_Section):
    """Desk-scale topology sizes."""
    input_height: int = Field(32, ge=1)
    input_width: int = Field(16, ge=1)
    channels: IntList = (8, 16, 32)
    reduction_channels: int = Field(16, ge=1)
    stripes: int = Field(2, ge=1)
    regional_branches: bool = True
    clipping: bool = True
    clip_lo: float = 0.0
    clip_hi: float = 6.0
    bn_momentum: float = Field(0.1, gt=0.0, lt=1.0)
    bn_eps: float = Field(1e-5, gt=0.0)
    conv_bias_init: Literal['zeros', 'normal'] = 'zeros'
    conv_bias_std: float = Field(0.1, ge=0.0)
    classifier_init_std: float = Field(0.01, gt=0.0)

    @model_validator(mode='after')
    def _check(self) -> 'ModelConfig':
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("model.channels must be a non-empty list of positive ints")
        if len(self.channels) < 2:
            raise ValueError("model.channels needs at least two blocks (shared backbone + final block)")
        if self.clip_lo >= self.clip_hi:
            raise ValueError("model.clip_lo must be < model.clip_hi")
        return self


class RegConfig(_Section):
    """Regularization factor settings."""
    mode: Literal['adaptive', 'constant', 'unconstrained', 'off'] = 'adaptive'
    amplitude: float = Field(0.0025, gt=0.0)
    half_width: float = Field(2.5, gt=0.0)
    theta_init: float = 0.0
    constant_lambda: float = Field(0.00125, ge=0.0)
    theta_lr_scale: float = Field(1.0, ge=0.0)
    map_dense_bias: str = ''

    @field_validator('map_dense_bias')
    @classmethod
    def _known_category(cls, v: str) -> str:
        if v and v not in CATEGORIES:
            raise ValueError(f"reg.map_dense_bias must be one of {', '.join(CATEGORIES)}")
        return v


class LossConfig(_Section):
    label_smoothing: float = Field(0.1, ge=0.0, lt=1.0)
    margin: float = Field(0.3, ge=0.0)
    triplet: bool = True
    mask_task_losses: bool = False


class AugConfig(_Section):
    flip_prob: float = Field(0.5, ge=0.0, le=1.0)
    pad: int = Field(2, ge=0)
    erase_prob: float = Field(0.5, ge=0.0, le=1.0)
    erase_area: FloatPair = (0.02, 0.4)
    erase_aspect: FloatPair = (0.3, 3.3)

    @model_validator(mode='after')
    def _check(self) -> 'AugConfig':
        lo, hi = self.erase_area
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError("aug.erase_area must satisfy 0 < lo <= hi < 1")
        lo, hi = self.erase_aspect
        if not (0.0 < lo <= hi):
            raise ValueError("aug.erase_aspect must satisfy 0 < lo <= hi")
        return self


class TrainConfig(_Section):
    seed: int = Field(0, ge=0)
    iterations: int = Field(2000, ge=0)
    P: int = Field(4, ge=2)
    K: int = Field(4, ge=2)
    base_lr: float = Field(0.01, ge=0.0)
    warmup_iters: int = Field(200, ge=0)
    warmup_start_factor: float = Field(0.1, ge=0.0, le=1.0)
    milestones: IntList = (800, 1400)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    snapshot_every: int = Field(100, ge=1)
    log_every: int = Field(50, ge=1)

    @model_validator(mode='after')
    def _check(self) -> 'TrainConfig':
        previous = self.warmup_iters
        for m in self.milestones:
            if m <= previous:
                raise ValueError("train.milestones must be strictly increasing and > train.warmup_iters")
            previous = m
        return self


class EvalConfig(_Section):
    protocol: Literal['same_cam_same_id', 'same_cam'] = 'same_cam_same_id'
    max_rank: int = Field(0, ge=0, description="0 means the gallery size")
    dump_top_k: int = Field(10, ge=1)


class AnalysisConfig(_Section):
    hist_lo: float = 0.0
    hist_hi: float = 0.0025
    buckets: int = Field(5, ge=1)

    @model_validator(mode='after')
    def _check(self) -> 'AnalysisConfig':
        if self.hist_lo >= self.hist_hi:
            raise ValueError("analysis.hist_lo must be < analysis.hist_hi")
        return self


class GradcheckConfig(_Section):
    h: float = Field(1e-5, gt=0.0)
    tol: float = Field(1e-5, gt=0.0)
    atol: float = Field(1e-9, ge=0.0)
    max_coords: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)


class RunConfig(_Section):
    """Complete, schema-validated run configuration."""
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    reg: RegConfig = RegConfig()
    loss: LossConfig = LossConfig()
    aug: AugConfig = AugConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    gradcheck: GradcheckConfig = GradcheckConfig()

    def with_overrides(self, overrides: Mapping[str, Any]) -> 'RunConfig':
        """Return a new config with flat dotted overrides applied and re-validated."""
        flat = to_flat(self)
        for key, value in overrides.items():
            flat[key] = _format_value(value) if not isinstance(value, str) else value
        return from_flat(flat)


def _nest(flat: Mapping[str, Optional[str]]) -> Dict[str, Dict[str, Any]]:
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in flat.items():
        if '.' not in key:
            raise ConfigError(f"config key '{key}' must be of the form section.field")
        section, field = key.split('.', 1)
        if value is None:
            raise ConfigError(f"config key '{key}' has no value")
        nested.setdefault(section, {})[field] = value
    return nested


def from_flat(flat: Mapping[str, Optional[str]]) -> RunConfig:
    """Build a RunConfig from a flat dotted mapping.

    Raises:
        ConfigError: on unknown keys or values violating the schema.
    """
    nested = _nest(flat)
    try:
        return RunConfig.model_validate(nested)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            loc = '.'.join(str(part) for part in err['loc'])
            problems.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid configuration: " + '; '.join(problems)) from e


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Load a config file (or defaults when ``path`` is None) and apply overrides."""
    flat: Dict[str, Optional[str]] = {}
    if path is not None:
        try:
            with open(path) as stream:
                flat.update(dotenv_values(stream=stream))
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
    config = from_flat(flat)
    if overrides:
        config = config.with_overrides(overrides)
    return config


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ','.join(_format_value(v) for v in value)
    return str(value)


def to_flat(config: RunConfig) -> Dict[str, str]:
    """Flatten a config into ``section.field -> str`` in schema order."""
    flat: Dict[str, str] = {}
    for section, values in config.model_dump().items():
        for field, value in values.items():
            flat[f"{section}.{field}"] = _format_value(value)
    return flat


def dump_env(config: RunConfig) -> str:
    """Render a config as a reloadable flat document."""
    return ''.join(f"{key}={value}\n" for key, value in to_flat(config).items())
