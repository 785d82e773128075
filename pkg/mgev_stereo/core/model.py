"""Full stereo network: features, multi-range volumes, regularization and iterative refinement."""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..utils.padding import InputPadder
from .config import ModelConfig
from .costvolume import CorrelationVolumeSet, CostVolumeBuilder
from .features import ContextNetwork, FeatureContext, FeatureNetwork, FeaturePyramid
from .layers import ParameterStore
from .regularization import GeometryRegularizer, GeometrySet, regularize, soft_argmin
from .tensor import Tensor
from .update import (ConvexUpsampler, DisparityField, LookupConfig, SelectiveFusion,
                     UpdateBlock, iterate)

logger = logging.getLogger(__name__)

RANGE_NAMES = ('s', 'm', 'l')


@dataclass
class StereoPrediction:
    pyramid: FeaturePyramid
    volumes: CorrelationVolumeSet
    geometry: GeometrySet
    field: DisparityField

    @property
    def disparity(self) -> Tensor:
        """Full-resolution disparity in px after the last iteration."""
        return self.field.upsampled


class MGEVStereo:
    """Owns every parameter in one :class:`ParameterStore` and runs the forward pass."""

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        self.store = ParameterStore(config.seed, config.dtype)
        self.lookup = LookupConfig(config.radius, config.apc_levels)
        taps = self.lookup.taps

        self.fnet = FeatureNetwork(self.store, 'fnet', config)
        if config.variant == 'rt':
            self.cnet = FeatureContext(self.store, 'cnet', config)
        else:
            self.cnet = ContextNetwork(self.store, 'cnet', config)
        self.volumes = CostVolumeBuilder(self.store, 'volume', config)
        self.regularizers = [GeometryRegularizer(self.store, f'reg_{RANGE_NAMES[i]}', config)
                             for i in range(len(config.ranges))]

        self.fusion = None
        if config.multi_range and config.use_sgff:
            self.fusion = SelectiveFusion(self.store, 'sgff', config.feature_channels[1])
            geometry_taps = taps
        else:
            geometry_taps = taps * len(config.ranges)
        geometry_channels = geometry_taps + taps * config.apc_levels
        self.update = UpdateBlock(self.store, 'update', config, geometry_channels)
        self.upsampler = ConvexUpsampler(self.store, 'upsample', config.hidden, config.feature_channels[0])
        logger.info(f"Built {config.variant} model: {len(self.store)} tensors, "
                    f"{self.store.count():,} parameters, ranges={tuple(config.ranges)}")

    # Parameters ----------------------------------------------------------------
    def parameters(self) -> Dict[str, Tensor]:
        return self.store.named_parameters()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return self.store.state_dict()

    def load_state_dict(self, state, strict: bool = True) -> None:
        params = {k: v for k, v in state.items() if not k.startswith('__optim__.')}
        self.store.load_state_dict(params, strict=strict)

    def zero_grad(self) -> None:
        self.store.zero_grad()

    # Forward -------------------------------------------------------------------
    def _normalize(self, image) -> Tensor:
        data = image.data if isinstance(image, Tensor) else np.asarray(image)
        return Tensor(2.0 * data.astype(self.store.dtype) - 1.0)

    def geometry(self, volumes: CorrelationVolumeSet, pyramid: FeaturePyramid) -> GeometrySet:
        regularized = [regularize(vol, pyramid, net)
                       for (_, vol), net in zip(volumes.volumes(), self.regularizers)]
        initial = [soft_argmin(g, stride) for g, stride in zip(regularized, volumes.spec.strides)]
        regularized += [None] * (3 - len(regularized))
        initial += [None] * (3 - len(initial))
        return GeometrySet(*regularized, *initial)

    def __call__(self, left, right, iters: Optional[int] = None,
                 upsample_history: bool = True) -> StereoPrediction:
        """Images are N×3×H×W (or 3×H×W) in [0, 1] with H, W divisible by 32."""
        if iters is None:
            iters = self.config.iters_infer
        left, right = self._normalize(left), self._normalize(right)
        if left.shape != right.shape:
            raise ValueError(f"left/right image shapes differ: {left.shape} vs {right.shape}")
        pyr_l = self.fnet(left)
        pyr_r = self.fnet(right)
        context = self.cnet(pyr_l) if self.config.variant == 'rt' else self.cnet(left)
        volumes = self.volumes(pyr_l, pyr_r)
        geometry = self.geometry(volumes, pyr_l)
        field = iterate(geometry, volumes.apc, context, pyr_l[4], pyr_l[2], self.update, self.fusion,
                        self.upsampler, iters, self.lookup, detach=self.config.detach_disparity,
                        upsample_every=upsample_history)
        return StereoPrediction(pyr_l, volumes, geometry, field)

    def predict(self, left: np.ndarray, right: np.ndarray, iters: Optional[int] = None,
                history: bool = False) -> Dict[str, object]:
        """Inference on 3×H×W arrays of any size: pads to /32 by edge replication, then crops.

        Returns ``disparity`` (H×W) and, when ``history`` is set, ``iterations`` (list of H×W).
        """
        if left.shape != right.shape:
            raise ValueError(f"left/right image shapes differ: {left.shape} vs {right.shape}")
        padder = InputPadder(left.shape, 32)
        pl, pr = padder.pad(left, right)
        pred = self(pl[None], pr[None], iters, upsample_history=history)
        out = {'disparity': padder.unpad(pred.disparity.data[0]), 'prediction': pred}
        if history:
            out['iterations'] = [padder.unpad(d.data[0]) for d in pred.field.upsampled_history]
        return out


def build_model(config: ModelConfig, state: Optional[Dict[str, np.ndarray]] = None) -> MGEVStereo:
    model = MGEVStereo(config)
    if state is not None:
        model.load_state_dict(state)
    return model
