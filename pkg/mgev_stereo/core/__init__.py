"""Core modules."""

from .config import ModelConfig, parse_config
from .model import MGEVStereo, build_model
from .trainer import StereoTrainer

__all__ = ["ModelConfig", "parse_config", "MGEVStereo", "build_model", "StereoTrainer"]
