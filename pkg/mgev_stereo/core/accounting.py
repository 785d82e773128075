"""Analytic memory and FLOP accounting for the volumes and the update loop."""

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import pandas as pd

from .config import RT_DEFAULTS, ModelConfig
from .costvolume import RangeSpec
from .layers import Conv, ParameterStore
from .update import ConvexUpsampler, LookupConfig, SelectiveFusion, UpdateBlock

logger = logging.getLogger(__name__)


@dataclass
class Accounting:
    variant: str
    height: int
    width: int
    groups: int
    bins: Tuple[int, ...]
    mgev_bins: int
    full_range_bins: int
    mgev_elements: int
    full_range_elements: int
    apc_elements: int
    bytes_per_element: int
    update_flops: int
    upsample_flops: int
    iters: int
    parameters: int

    @property
    def volume_bytes(self) -> int:
        return self.mgev_elements * self.bytes_per_element

    @property
    def full_range_bytes(self) -> int:
        return self.full_range_elements * self.bytes_per_element

    @property
    def inference_flops(self) -> int:
        return self.iters * self.update_flops + self.upsample_flops

    def to_frame(self) -> pd.DataFrame:
        row = asdict(self)
        row['bins'] = '/'.join(str(b) for b in self.bins)
        row['volume_bytes'] = self.volume_bytes
        row['full_range_bytes'] = self.full_range_bytes
        row['inference_flops'] = self.inference_flops
        return pd.DataFrame({'quantity': list(row), 'value': list(row.values())})


def _conv_flops(conv: Conv, height: int, width: int) -> int:
    """2·MACs of a 2D convolution producing an output at the given input resolution."""
    cout, cin, kh, kw = conv.weight.shape
    stride = conv.stride if isinstance(conv.stride, int) else conv.stride[0]
    return 2 * cout * cin * kh * kw * (height // stride) * (width // stride)


def _gru_convs(gru) -> List[Conv]:
    return [] if gru is None else [gru.conv_z, gru.conv_r, gru.conv_h]


def update_flops(config: ModelConfig, height: int, width: int) -> Tuple[int, int]:
    """(per-iteration update FLOPs, convex-upsampling FLOPs) for an H×W input."""
    store = ParameterStore(0, 'f32')
    taps = LookupConfig(config.radius, config.apc_levels).taps
    fusion = None
    if config.multi_range and config.use_sgff:
        fusion = SelectiveFusion(store, 'sgff', config.feature_channels[1])
        geometry = taps
    else:
        geometry = taps * len(config.ranges)
    block = UpdateBlock(store, 'update', config, geometry + taps * config.apc_levels)
    upsampler = ConvexUpsampler(store, 'upsample', config.hidden, config.feature_channels[0])

    h4, w4 = height // 4, width // 4
    at_quarter = [block.enc_g1, block.enc_g2, block.enc_d1, block.enc_d2, block.dec1, block.dec2]
    at_quarter += _gru_convs(block.gru04)
    if fusion is not None:
        at_quarter += [fusion.disp, fusion.select]
    flops = sum(_conv_flops(c, h4, w4) for c in at_quarter)
    flops += sum(_conv_flops(c, h4 // 2, w4 // 2) for c in _gru_convs(block.gru08))
    flops += sum(_conv_flops(c, h4 // 4, w4 // 4) for c in _gru_convs(block.gru16))
    # lookup: two reads and a lerp per sampled value
    samples = taps * (len(config.ranges) + config.apc_levels) * h4 * w4
    flops += 3 * samples

    up = _conv_flops(upsampler.lift, h4, w4)
    up += _conv_flops(upsampler.fuse, 2 * h4, 2 * w4) + _conv_flops(upsampler.mask, 2 * h4, 2 * w4)
    up += 2 * 9 * height * width
    return int(flops), int(up)


def account(config: ModelConfig, height: Optional[int] = None, width: Optional[int] = None,
            with_parameters: bool = True) -> Accounting:
    height = height or config.crop[0]
    width = width or config.crop[1]
    if height % 32 or width % 32:
        raise ValueError(f"accounting needs dims divisible by 32, got {height}×{width}")
    spec = RangeSpec.from_config(config)
    bins = spec.bins
    pixels = (height // 4) * (width // 4)
    apc_width = width // 4
    apc = sum(apc_width // 2 ** level for level in range(config.apc_levels)) * pixels
    full_bins = config.max_disparity // 4
    step, up = update_flops(config, height, width)
    params = 0
    if with_parameters:
        from .model import MGEVStereo
        params = MGEVStereo(config).store.count()
    logger.info(f"{config.variant}: {int(sum(bins))} volume bins vs {int(full_bins)} full-range at {height}×{width}")
    return Accounting(
        variant=config.variant, height=height, width=width, groups=config.groups, bins=bins,
        mgev_bins=int(sum(bins)), full_range_bins=int(full_bins),
        mgev_elements=int(sum(bins) * config.groups * pixels),
        full_range_elements=int(full_bins * config.groups * pixels),
        apc_elements=int(apc), bytes_per_element=4 if config.dtype == 'f32' else 8,
        update_flops=step, upsample_flops=up, iters=config.iters_infer, parameters=int(params))


def rt_counterpart(config: ModelConfig) -> ModelConfig:
    """The real-time configuration sharing this config's channels and smallest range."""
    if config.variant == 'rt':
        return config
    changes = dict(RT_DEFAULTS)
    changes['ranges'] = (config.ranges[0],)
    return config.derive(variant='rt', **changes)


def compare(config: ModelConfig, height: Optional[int] = None, width: Optional[int] = None,
            with_parameters: bool = True) -> pd.DataFrame:
    """Side-by-side accounting of ``config`` and its real-time counterpart."""
    reports = {config.variant: account(config, height, width, with_parameters)}
    other = rt_counterpart(config)
    if other is not config:
        reports['rt'] = account(other, height, width, with_parameters)
    frames = [r.to_frame().set_index('quantity').rename(columns={'value': name})
              for name, r in reports.items()]
    return pd.concat(frames, axis=1).reset_index()
