"""mgev_stereo: Multi-range geometry encoding volume stereo matcher"""

from .core import MGEVStereo, ModelConfig, StereoTrainer, build_model, parse_config

__version__ = "0.1.0"
__all__ = ["MGEVStereo", "ModelConfig", "StereoTrainer", "build_model", "parse_config"]
