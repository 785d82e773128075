"""Feature and context networks.

The feature network is a five-stage strided encoder down to 1/32 followed by
upsampling blocks with skip connections back to 1/4, plus one extra block to
1/2. The same parameters are applied to the left and the right image. The
context network is a stack of residual blocks producing ConvGRU hidden-state
initialisations and gate contexts at 1/4, 1/8 and 1/16.
"""

from dataclasses import dataclass
from typing import Dict, List

from .config import ModelConfig
from .conv import instance_norm, upsample_nearest2d
from .layers import Conv, ParameterStore
from .tensor import Tensor, concat, relu, tanh

SCALES = (2, 4, 8, 16, 32)


@dataclass
class FeaturePyramid:
    """Feature maps keyed by downsampling factor (2, 4, 8, 16, 32)."""

    maps: Dict[int, Tensor]

    def __getitem__(self, scale: int) -> Tensor:
        return self.maps[scale]


@dataclass
class ContextLevel:
    c_z: Tensor
    c_r: Tensor
    c_h: Tensor
    h0: Tensor


@dataclass
class ContextSet:
    """Per-level gate contexts and initial hidden states, finest level first."""

    levels: List[ContextLevel]

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, index: int) -> ContextLevel:
        return self.levels[index]


def check_image(image: Tensor) -> Tensor:
    if image.ndim == 3:
        image = image.reshape((1,) + image.shape)
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError(f"expected a 3×H×W (or N×3×H×W) image, got {image.shape}")
    h, w = image.shape[2:]
    if h % 32 or w % 32:
        raise ValueError(f"image dims {h}×{w} must be divisible by 32; pad by "
                         f"{(-h) % 32}×{(-w) % 32} before extraction")
    return image


class FeatureNetwork:
    def __init__(self, store: ParameterStore, name: str, config: ModelConfig):
        enc, out = config.encoder_channels, config.feature_channels
        self.normalize = config.feature_norm == 'instance'
        self.down = []
        cin = 3
        for i, ch in enumerate(enc):
            self.down.append((Conv(store, f'{name}.down{i}.a', cin, ch, 3, stride=2),
                              Conv(store, f'{name}.down{i}.b', ch, ch, 3)))
            cin = ch
        self.head32 = Conv(store, f'{name}.head32', enc[4], out[4], 1)
        self.up = {}
        for i in (3, 2, 1, 0):
            scale = SCALES[i]
            self.up[scale] = (Conv(store, f'{name}.up{scale}.fuse', out[i + 1] + enc[i], out[i], 3),
                              Conv(store, f'{name}.up{scale}.head', out[i], out[i], 1))

    def _act(self, x: Tensor) -> Tensor:
        return relu(instance_norm(x) if self.normalize else x)

    def __call__(self, image: Tensor) -> FeaturePyramid:
        x = check_image(image)
        skips = []
        for conv_a, conv_b in self.down:
            x = self._act(conv_b(self._act(conv_a(x))))
            skips.append(x)
        maps = {32: self.head32(skips[4])}
        for i in (3, 2, 1, 0):
            scale = SCALES[i]
            fuse, head = self.up[scale]
            y = concat([upsample_nearest2d(maps[scale * 2], 2), skips[i]], axis=1)
            maps[scale] = head(self._act(fuse(y)))
        return FeaturePyramid(maps)


class _ResidualBlock:
    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int, stride: int):
        self.conv1 = Conv(store, f'{name}.conv1', cin, cout, 3, stride=stride)
        self.conv2 = Conv(store, f'{name}.conv2', cout, cout, 3)
        self.skip = Conv(store, f'{name}.skip', cin, cout, 1, stride=stride) if stride != 1 or cin != cout else None

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(relu(self.conv1(x)))
        return relu(y + (self.skip(x) if self.skip is not None else x))


class _ContextHead:
    """Splits a feature map into tanh hidden init and (c_z, c_r, c_h)."""

    def __init__(self, store: ParameterStore, name: str, cin: int, hidden: int):
        self.hidden = hidden
        self.net = Conv(store, f'{name}.net', cin, hidden, 3)
        self.inp = Conv(store, f'{name}.inp', cin, hidden, 3)
        self.gates = Conv(store, f'{name}.gates', hidden, 3 * hidden, 3)

    def __call__(self, x: Tensor) -> ContextLevel:
        h0 = tanh(self.net(x))
        c = self.gates(relu(self.inp(x)))
        k = self.hidden
        return ContextLevel(c_z=c[:, :k], c_r=c[:, k:2 * k], c_h=c[:, 2 * k:], h0=h0)


class ContextNetwork:
    def __init__(self, store: ParameterStore, name: str, config: ModelConfig):
        hidden = config.hidden
        self.levels = config.gru_levels
        self.stem = Conv(store, f'{name}.stem', 3, hidden // 2, 3, stride=2)
        self.blocks = [_ResidualBlock(store, f'{name}.block4', hidden // 2, hidden, 2),
                       _ResidualBlock(store, f'{name}.block8', hidden, hidden, 2),
                       _ResidualBlock(store, f'{name}.block16', hidden, hidden, 2)]
        self.heads = [_ContextHead(store, f'{name}.head{s}', hidden, hidden) for s in (4, 8, 16)]

    def __call__(self, image: Tensor) -> ContextSet:
        x = relu(self.stem(check_image(image)))
        levels = []
        for block, head in list(zip(self.blocks, self.heads))[:self.levels]:
            x = block(x)
            levels.append(head(x))
        return ContextSet(levels)


class FeatureContext:
    """Context taken from f_4 of the feature network (real-time variant)."""

    def __init__(self, store: ParameterStore, name: str, config: ModelConfig):
        self.head = _ContextHead(store, f'{name}.head4', config.feature_channels[1], config.hidden)

    def __call__(self, pyramid: FeaturePyramid) -> ContextSet:
        return ContextSet([self.head(pyramid[4])])


def extract_features(image: Tensor, network: FeatureNetwork) -> FeaturePyramid:
    return network(image)


def extract_context(image: Tensor, network: ContextNetwork) -> ContextSet:
    return network(image)
