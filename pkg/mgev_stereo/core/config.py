"""Model and training configuration: parsing, defaults and validation."""

import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Tuple

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Every knob of the network, its loss and its training run."""

    variant: str = 'full'
    ranges: Tuple[int, ...] = (192, 384, 768)
    groups: int = 8
    feature_channels: Tuple[int, ...] = (32, 96, 64, 192, 160)
    encoder_channels: Tuple[int, ...] = (32, 48, 64, 96, 128)
    feature_norm: str = 'instance'
    hidden: int = 128
    gru_levels: int = 3
    reg_channels: Tuple[int, ...] = (16, 32, 48)
    reg_stem: int = 8
    geo_encoder: int = 96
    disp_encoder: int = 64
    radius: int = 4
    apc_levels: int = 3
    iters_train: int = 22
    iters_infer: int = 16
    loss_weights: Tuple[float, ...] = (1.0, 0.5, 0.2)
    gamma: float = 0.9
    seed: int = 0
    lr: float = 2e-4
    final_lr: float = 2e-6
    warmup: float = 0.05
    weight_decay: float = 1e-5
    steps: int = 200000
    batch: int = 8
    crop: Tuple[int, ...] = (256, 768)
    dtype: str = 'f32'
    checkpoint_every: int = 1000
    detach_disparity: bool = True
    use_apm: bool = True
    use_sgff: bool = True
    brightness_jitter: float = 0.0

    @property
    def multi_range(self) -> bool:
        return len(self.ranges) == 3

    @property
    def max_disparity(self) -> int:
        return self.ranges[-1]

    def validate(self) -> 'ModelConfig':
        if self.variant not in ('full', 'rt'):
            raise ValueError(f"variant must be 'full' or 'rt', got '{self.variant}'")
        if self.variant == 'rt':
            if len(self.ranges) != 1:
                raise ValueError(f"variant rt builds a single range, got ranges={self.ranges}")
            if self.gru_levels != 1:
                raise ValueError(f"variant rt uses one ConvGRU level, got gru_levels={self.gru_levels}")
            if self.hidden != 96:
                raise ValueError(f"variant rt uses 96 hidden channels, got hidden={self.hidden}")
        else:
            if len(self.ranges) != 3:
                raise ValueError(f"variant full needs three ranges (D_s, D_m, D_l), got {self.ranges}")
            if self.gru_levels not in (1, 2, 3):
                raise ValueError(f"gru_levels must be 1, 2 or 3, got {self.gru_levels}")
        if list(self.ranges) != sorted(set(self.ranges)):
            raise ValueError(f"ranges must be strictly increasing, got {self.ranges}")
        for rng, stride in zip(self.ranges, (1, 2, 4)):
            if rng % (4 * stride):
                raise ValueError(f"range {rng} must be divisible by {4 * stride}")
        if len(self.feature_channels) != 5 or len(self.encoder_channels) != 5:
            raise ValueError("feature_channels and encoder_channels need five entries (1/2 .. 1/32)")
        if self.feature_channels[1] % self.groups:
            raise ValueError(f"f_4 channels {self.feature_channels[1]} not divisible by groups={self.groups}")
        if self.feature_norm not in ('instance', 'none'):
            raise ValueError(f"feature_norm must be 'instance' or 'none', got '{self.feature_norm}'")
        if len(self.reg_channels) != 3:
            raise ValueError(f"reg_channels needs three entries, got {self.reg_channels}")
        if len(self.crop) != 2 or any(c % 32 for c in self.crop):
            raise ValueError(f"crop dims must be divisible by 32, got {self.crop}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        if self.apc_levels < 1:
            raise ValueError(f"apc_levels must be >= 1, got {self.apc_levels}")
        if len(self.loss_weights) != 3 or min(self.loss_weights) <= 0:
            raise ValueError(f"loss_weights must be three positive values, got {self.loss_weights}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.iters_train < 1 or self.iters_infer < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.dtype not in ('f32', 'f64'):
            raise ValueError(f"dtype must be 'f32' or 'f64', got '{self.dtype}'")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be positive, got {self.checkpoint_every}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def save(self, path: str) -> None:
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def derive(self, **changes) -> 'ModelConfig':
        return replace(self, **changes).validate()


_FIELDS = {f.name: f for f in fields(ModelConfig)}
_TUPLE_ITEM = {'ranges': int, 'feature_channels': int, 'encoder_channels': int,
               'reg_channels': int, 'crop': int, 'loss_weights': float}

# Real-time preset defaults applied before user values when variant = rt.
RT_DEFAULTS = {'ranges': (192,), 'gru_levels': 1, 'hidden': 96, 'iters_infer': 6}


def _convert(key: str, value: Any) -> Any:
    if key not in _FIELDS:
        raise ValueError(f"Unknown configuration key '{key}'")
    default = _FIELDS[key].default
    if key in _TUPLE_ITEM:
        items = value.split(',') if isinstance(value, str) else list(value)
        return tuple(_TUPLE_ITEM[key](str(v).strip()) for v in items if str(v).strip())
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ['true', '1', 'yes', 'on']
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value).strip()


def _read_key_values(config_file: str) -> Dict[str, str]:
    raw = {}
    with open(config_file, 'r') as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '#' in line:
                line = line.split('#')[0].strip()
            if '=' not in line:
                raise ValueError(f"{config_file}:{line_num}: expected 'key = value', got '{line}'")
            key, value = line.split('=', 1)
            raw[key.strip()] = value.strip()
    return raw


def config_from_dict(raw: Dict[str, Any]) -> ModelConfig:
    """Apply defaults (rt preset first when requested), convert and validate."""
    values = {key: _convert(key, value) for key, value in raw.items()}
    merged = {}
    if values.get('variant', ModelConfig.variant) == 'rt':
        merged.update(RT_DEFAULTS)
    merged.update(values)
    config = ModelConfig(**merged)
    if config.dtype == 'f64':
        logger.warning("dtype f64 is intended for gradient checks; training will be slow.")
    return config.validate()


def parse_config(config_file: str) -> ModelConfig:
    """Parse a ``key = value`` text file or a JSON object into a validated :class:`ModelConfig`."""
    if not os.path.exists(config_file):
        raise FileNotFoundError(f"Config file not found: {config_file}")
    if config_file.endswith('.json'):
        with open(config_file, 'r') as f:
            raw = json.load(f)
        if not isinstance(raw, dict):
            raise ValueError(f"{config_file}: expected a JSON object")
    else:
        raw = _read_key_values(config_file)
    return config_from_dict(raw)
