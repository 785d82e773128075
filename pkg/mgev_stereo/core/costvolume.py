"""Multi-range correlation volumes and the all-pairs correlation pyramid.

Volumes live at 1/4 resolution with layout N×G×bins×H×W. Bin ``k`` of a
volume with stride ``s`` covers quarter-resolution disparity ``k·s``. Terms
whose right-image column falls outside the image contribute zero.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import ModelConfig
from .conv import avg_pool_axis
from .features import FeaturePyramid
from .layers import ParameterStore
from .tensor import Tensor, _result, einsum, mul, reshape, sum_

logger = logging.getLogger(__name__)

BIN_STRIDES = (1, 2, 4)


@dataclass
class RangeSpec:
    """Maximum disparities (full-resolution px) with their bin strides and patch sizes."""

    ranges: Tuple[int, ...] = (192, 384, 768)
    groups: int = 8
    strides: Tuple[int, ...] = BIN_STRIDES
    patches: Tuple[int, ...] = BIN_STRIDES

    def __post_init__(self):
        if not 1 <= len(self.ranges) <= 3:
            raise ValueError(f"one to three ranges expected, got {self.ranges}")
        if list(self.ranges) != sorted(set(self.ranges)):
            raise ValueError(f"ranges must satisfy D_s < D_m < D_l, got {self.ranges}")
        for rng, stride in zip(self.ranges, self.strides):
            if rng % (4 * stride):
                raise ValueError(f"range {rng} must be divisible by {4 * stride}")

    @classmethod
    def from_config(cls, config: ModelConfig) -> 'RangeSpec':
        return cls(ranges=tuple(config.ranges), groups=config.groups)

    @property
    def bins(self) -> Tuple[int, ...]:
        """Bin counts at 1/4 resolution: D_s/4, D_m/8, D_l/16."""
        return tuple(rng // (4 * stride) for rng, stride in zip(self.ranges, self.strides))


@dataclass
class CorrelationVolumeSet:
    c_s: Tensor
    c_m: Optional[Tensor]
    c_l: Optional[Tensor]
    apc: List[Tensor]
    spec: RangeSpec
    omega_m: Optional[Tensor] = None
    omega_l: Optional[Tensor] = None

    def volumes(self) -> List[Tuple[str, Tensor]]:
        named = [('c_s', self.c_s), ('c_m', self.c_m), ('c_l', self.c_l)]
        return [(name, vol) for name, vol in named if vol is not None]


def _check_pair(f_l: Tensor, f_r: Tensor, groups: int) -> None:
    if f_l.shape != f_r.shape:
        raise ValueError(f"left/right features differ: {f_l.shape} vs {f_r.shape}")
    if f_l.ndim != 4:
        raise ValueError(f"features must be N×C×H×W, got {f_l.shape}")
    if f_l.shape[1] % groups:
        raise ValueError(f"{f_l.shape[1]} channels not divisible by {groups} groups")


def shifted_group_dot(f_l: Tensor, f_r: Tensor, offsets: Sequence[int], groups: int) -> Tensor:
    """out[n, g, k, y, x] = (G/C)·<f_l^g(x, y), f_r^g(x − offsets[k], y)>, zero when x < offset."""
    _check_pair(f_l, f_r, groups)
    n, c, h, w = f_l.shape
    scale = groups / c
    left = f_l.data.reshape(n, groups, c // groups, h, w)
    right = f_r.data.reshape(n, groups, c // groups, h, w)
    out = np.zeros((n, groups, len(offsets), h, w), dtype=f_l.dtype)
    for k, off in enumerate(offsets):
        if off < w:
            out[:, :, k, :, off:] = scale * (left[..., off:] * right[..., :w - off]).sum(axis=2)

    def backward(g, needs):
        gl = np.zeros_like(left) if needs[0] else None
        gr = np.zeros_like(right) if needs[1] else None
        for k, off in enumerate(offsets):
            if off >= w:
                continue
            gk = scale * g[:, :, k, None, :, off:]
            if needs[0]:
                gl[..., off:] += gk * right[..., :w - off]
            if needs[1]:
                gr[..., :w - off] += gk * left[..., off:]
        return (gl.reshape(f_l.shape) if needs[0] else None,
                gr.reshape(f_r.shape) if needs[1] else None)

    return _result(out, (f_l, f_r), backward, 'shifted_group_dot')


def group_correlation(f_l: Tensor, f_r: Tensor, num_disp: int, stride: int = 1, groups: int = 8) -> Tensor:
    """Group-wise correlation over ``num_disp`` bins spaced ``stride`` apart."""
    width = f_l.shape[-1]
    if num_disp < 1 or num_disp > 4 * width:
        raise ValueError(f"{num_disp} disparity bins invalid: need 1 <= bins <= {4 * width} "
                         f"(image width = 4 × feature width {width})")
    return shifted_group_dot(f_l, f_r, [d * stride for d in range(num_disp)], groups)


def adaptive_patch_correlation(f_l: Tensor, f_r: Tensor, num_disp: int, stride: int, patch: int,
                               omega: Tensor, groups: int = 8) -> Tensor:
    """Patch-weighted correlation: bin k sums ω[g, i]·corr at offset k·stride + i, i < patch."""
    if stride != patch:
        raise ValueError(f"adaptive patch matching needs stride == patch, got {stride} vs {patch}")
    if omega.shape != (groups, patch):
        raise ValueError(f"omega must have shape {(groups, patch)}, got {omega.shape}")
    offsets = [k * stride + i for k in range(num_disp) for i in range(patch)]
    if num_disp < 1 or num_disp > 4 * f_l.shape[-1]:
        raise ValueError(f"{num_disp} disparity bins invalid: need 1 <= bins <= {4 * f_l.shape[-1]} "
                         f"(image width = 4 × feature width {f_l.shape[-1]})")
    base = shifted_group_dot(f_l, f_r, offsets, groups)
    n, g, _, h, w = base.shape
    base = reshape(base, (n, g, num_disp, patch, h, w))
    weighted = mul(base, reshape(omega, (1, groups, 1, patch, 1, 1)))
    return sum_(weighted, axis=3)


def all_pairs_correlation(f_l: Tensor, f_r: Tensor, levels: int = 3) -> List[Tensor]:
    """Per-row correlation ``apc[n, x', y, x] = <f_l(x, y), f_r(x', y)>/C`` and its pooled pyramid."""
    _check_pair(f_l, f_r, 1)
    corr = einsum('ncyx,ncyv->nvyx', f_l, f_r) * (1.0 / f_l.shape[1])
    pyramid = [corr]
    for _ in range(levels - 1):
        if pyramid[-1].shape[1] % 2:
            break
        pyramid.append(avg_pool_axis(pyramid[-1], axis=1, factor=2))
    return pyramid


def build_volumes(pyr_l: FeaturePyramid, pyr_r: FeaturePyramid, spec: RangeSpec,
                  omega_m: Optional[Tensor] = None, omega_l: Optional[Tensor] = None,
                  apc_levels: int = 3) -> CorrelationVolumeSet:
    f_l, f_r = pyr_l[4], pyr_r[4]
    bins = spec.bins
    c_s = group_correlation(f_l, f_r, bins[0], spec.strides[0], spec.groups)
    c_m = c_l = None
    if len(bins) > 1:
        omegas = (omega_m, omega_l)
        built = []
        for idx in (1, 2):
            if idx >= len(bins):
                built.append(None)
                continue
            omega = omegas[idx - 1]
            if omega is None:
                omega = Tensor(np.full((spec.groups, spec.patches[idx]), 1.0 / spec.patches[idx], dtype=f_l.dtype))
            built.append(adaptive_patch_correlation(f_l, f_r, bins[idx], spec.strides[idx],
                                                    spec.patches[idx], omega, spec.groups))
        c_m, c_l = built
    apc = all_pairs_correlation(f_l, f_r, apc_levels)
    return CorrelationVolumeSet(c_s, c_m, c_l, apc, spec, omega_m, omega_l)


class CostVolumeBuilder:
    """Owns the patch weights ω^m, ω^l and assembles the volume set.

    With ``use_apm`` off, ω is fixed to (1, 0, …): plain strided sampling.
    """

    def __init__(self, store: ParameterStore, name: str, config: ModelConfig):
        self.spec = RangeSpec.from_config(config)
        self.apc_levels = config.apc_levels
        self.omega_m = self.omega_l = None
        if config.multi_range:
            g = config.groups
            if config.use_apm:
                self.omega_m = store.add(f'{name}.omega_m', np.full((g, 2), 0.5))
                self.omega_l = store.add(f'{name}.omega_l', np.full((g, 4), 0.25))
            else:
                self.omega_m = Tensor(np.eye(1, 2).repeat(g, axis=0).astype(store.dtype))
                self.omega_l = Tensor(np.eye(1, 4).repeat(g, axis=0).astype(store.dtype))

    def __call__(self, pyr_l: FeaturePyramid, pyr_r: FeaturePyramid) -> CorrelationVolumeSet:
        return build_volumes(pyr_l, pyr_r, self.spec, self.omega_m, self.omega_l, self.apc_levels)


def dump_volume(volume: Tensor, out_dir: str, prefix: str) -> List[str]:
    """Write one PFM per disparity bin (group mean, first sample) and return the paths."""
    from .io import write_pfm

    os.makedirs(out_dir, exist_ok=True)
    data = volume.data[0]
    if data.ndim == 4:
        data = data.mean(axis=0)
    paths = []
    for k in range(data.shape[0]):
        path = os.path.join(out_dir, f'{prefix}_bin{k:03d}.pfm')
        write_pfm(path, data[k])
        paths.append(path)
    logger.info(f"Dumped {len(paths)} bins of {prefix} to {out_dir}")
    return paths
