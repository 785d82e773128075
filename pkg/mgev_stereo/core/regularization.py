"""3D UNet regularization with guided cost volume excitation, and soft-argmin.

Each disparity range gets its own UNet. The network works on
(bin, y, x) volumes at 1/4 resolution, halving all three axes three times.
At every scale left-image features, projected to the volume's channel count,
gate the volume through a sigmoid.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .config import ModelConfig
from .features import FeaturePyramid
from .layers import Conv, ParameterStore
from .tensor import Tensor, concat, mul, relu, reshape, sigmoid, softmax, sum_


@dataclass
class GeometrySet:
    """Regularized volumes (N×bins×H×W) and initial disparities in quarter-resolution px."""

    g_s: Tensor
    g_m: Optional[Tensor]
    g_l: Optional[Tensor]
    d0_s: Tensor
    d0_m: Optional[Tensor]
    d0_l: Optional[Tensor]

    def initial(self) -> Tuple[Optional[Tensor], ...]:
        return self.d0_s, self.d0_m, self.d0_l

    def initial_px(self) -> Tuple[Optional[Tensor], ...]:
        """Initial disparities in full-resolution px."""
        return tuple(None if d is None else d * 4.0 for d in self.initial())


def excite(volume: Tensor, guide: Tensor) -> Tensor:
    """sigmoid(guide) ⊙ volume, with the N×C×H×W guide broadcast along the bin axis."""
    if guide.ndim != 4 or volume.ndim != 5:
        raise ValueError(f"excite needs a N×C×D×H×W volume and N×C×H×W guide, got {volume.shape}, {guide.shape}")
    n, c, _, h, w = volume.shape
    if guide.shape[-2:] != (h, w):
        raise ValueError(f"guide spatial dims {guide.shape[-2:]} do not match volume {(h, w)}")
    if guide.shape[1] != c:
        raise ValueError(f"guide has {guide.shape[1]} channels, volume has {c}")
    return mul(reshape(sigmoid(guide), (guide.shape[0], c, 1, h, w)), volume)


def soft_argmin(volume: Tensor, bin_stride: int) -> Tensor:
    """Σ_d (stride·d)·softmax(volume)_d over the bin axis of an N×bins×H×W volume."""
    bins = volume.shape[1]
    probs = softmax(volume, axis=1)
    values = (np.arange(bins, dtype=volume.dtype) * bin_stride).reshape((1, bins, 1, 1))
    return sum_(mul(probs, values), axis=1)


class _Block3d:
    """Two 3×3×3 convolutions, the first optionally strided."""

    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int, stride: int = 1):
        self.conv1 = Conv(store, f'{name}.conv1', cin, cout, 3, stride=stride, dims=3)
        self.conv2 = Conv(store, f'{name}.conv2', cout, cout, 3, dims=3)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.conv2(relu(self.conv1(x))))


class GeometryRegularizer:
    """Lightweight 3D UNet R: C (N×G×D×H×W) → G (N×D×H×W)."""

    def __init__(self, store: ParameterStore, name: str, config: ModelConfig):
        c1, c2, c3 = config.reg_channels
        stem = config.reg_stem
        feat = dict(zip((2, 4, 8, 16, 32), config.feature_channels))
        self.stem = _Block3d(store, f'{name}.stem', config.groups, stem)
        self.down = [_Block3d(store, f'{name}.down1', stem, c1, stride=2),
                     _Block3d(store, f'{name}.down2', c1, c2, stride=2),
                     _Block3d(store, f'{name}.down3', c2, c3, stride=2)]
        self.up = [Conv(store, f'{name}.up3', c3, c2, 4, stride=2, padding=1, dims=3, transposed=True),
                   Conv(store, f'{name}.up2', c2, c1, 4, stride=2, padding=1, dims=3, transposed=True),
                   Conv(store, f'{name}.up1', c1, stem, 4, stride=2, padding=1, dims=3, transposed=True)]
        self.agg = [_Block3d(store, f'{name}.agg16', 2 * c2, c2),
                    _Block3d(store, f'{name}.agg8', 2 * c1, c1),
                    _Block3d(store, f'{name}.agg4', 2 * stem, stem)]
        # guide projections, one per excitation point
        self.guides = {key: Conv(store, f'{name}.guide_{key}', feat[scale], ch, 1)
                       for key, scale, ch in (('s4', 4, stem), ('s8', 8, c1), ('s16', 16, c2), ('s32', 32, c3),
                                              ('u16', 16, c2), ('u8', 8, c1), ('u4', 4, stem))}
        self.guide_scale = {'s4': 4, 's8': 8, 's16': 16, 's32': 32, 'u16': 16, 'u8': 8, 'u4': 4}
        self.out = Conv(store, f'{name}.out', stem, 1, 3, dims=3)

    def _excite(self, x: Tensor, key: str, guide: FeaturePyramid) -> Tensor:
        return excite(x, self.guides[key](guide[self.guide_scale[key]]))

    def __call__(self, volume: Tensor, guide: FeaturePyramid) -> Tensor:
        if volume.ndim != 5:
            raise ValueError(f"regularize expects N×G×D×H×W, got {volume.shape}")
        dims = volume.shape[2:]
        if any(d % 8 for d in dims):
            pad = tuple((-d) % 8 for d in dims)
            raise ValueError(f"volume dims (bins, H, W) = {dims} must be divisible by 8; pad by {pad}")

        x4 = self._excite(self.stem(volume), 's4', guide)
        x8 = self._excite(self.down[0](x4), 's8', guide)
        x16 = self._excite(self.down[1](x8), 's16', guide)
        x32 = self._excite(self.down[2](x16), 's32', guide)

        y16 = relu(self.up[0](x32))
        y16 = self._excite(self.agg[0](concat([y16, x16], axis=1)), 'u16', guide)
        y8 = relu(self.up[1](y16))
        y8 = self._excite(self.agg[1](concat([y8, x8], axis=1)), 'u8', guide)
        y4 = relu(self.up[2](y8))
        y4 = self._excite(self.agg[2](concat([y4, x4], axis=1)), 'u4', guide)

        out = self.out(y4)
        n, _, d, h, w = out.shape
        return reshape(out, (n, d, h, w))


def regularize(volume: Tensor, guide: FeaturePyramid, network: GeometryRegularizer) -> Tensor:
    return network(volume, guide)
