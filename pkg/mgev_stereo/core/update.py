"""ConvGRU update operator: geometry lookup, selective fusion, GRU steps and convex upsampling.

Disparities here are quarter-resolution fields in quarter-resolution px.
Bin ``b`` of G^s, G^m, G^l sits at disparity ``b``, ``2b``, ``4b``.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import ModelConfig
from .conv import avg_pool2d, pixel_shuffle, upsample_nearest2d
from .features import ContextLevel, ContextSet
from .layers import Conv, ParameterStore
from .regularization import GeometrySet
from .tensor import (Tensor, clamp_min, concat, gather_linear, index_select, mul, relu,
                     reshape, sigmoid, softmax, sum_, tanh)


@dataclass
class LookupConfig:
    radius: int = 4
    apc_levels: int = 3

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"lookup radius must be >= 0, got {self.radius}")

    @property
    def taps(self) -> int:
        return 2 * self.radius + 1

    @property
    def offsets(self) -> List[int]:
        return list(range(-self.radius, self.radius + 1))


@dataclass
class GeometryLookup:
    f_s: Tensor
    f_m: Optional[Tensor]
    f_l: Optional[Tensor]
    f_apc: Tensor

    def stacked(self) -> Tensor:
        parts = [f for f in (self.f_s, self.f_m, self.f_l, self.f_apc) if f is not None]
        return concat(parts, axis=1)


@dataclass
class FusionWeights:
    """Per-pixel selective weights, N×1×H×W each, values in (0, 1)."""

    s_s: Tensor
    s_m: Tensor
    s_l: Tensor


@dataclass
class DisparityField:
    history: List[Tensor] = field(default_factory=list)
    upsampled_history: List[Tensor] = field(default_factory=list)
    hidden: Optional[List[Tensor]] = None

    @property
    def current(self) -> Tensor:
        return self.history[-1]

    @property
    def upsampled(self) -> Optional[Tensor]:
        return self.upsampled_history[-1] if self.upsampled_history else None


def lookup_geometry(geometry: GeometrySet, apc: Sequence[Tensor], disparity: Tensor,
                    cfg: LookupConfig) -> GeometryLookup:
    """Sample every geometry volume and APC level around the current disparity (N×H×W)."""
    offsets = cfg.offsets
    f_s = gather_linear(geometry.g_s, disparity, offsets)
    f_m = gather_linear(geometry.g_m, disparity * 0.5, offsets) if geometry.g_m is not None else None
    f_l = gather_linear(geometry.g_l, disparity * 0.25, offsets) if geometry.g_l is not None else None

    width = disparity.shape[-1]
    columns = np.arange(width, dtype=disparity.dtype).reshape((1, 1, width))
    target = columns - disparity
    samples = []
    for level, corr in enumerate(apc[:cfg.apc_levels]):
        samples.append(gather_linear(corr, target * (1.0 / 2 ** level), offsets))
    return GeometryLookup(f_s, f_m, f_l, concat(samples, axis=1))


class SelectiveFusion:
    """Two convolutions from (d0_s, d0_m, d0_l) and f_l,4 to three sigmoid weights."""

    def __init__(self, store: ParameterStore, name: str, feature_channels: int, mid: int = 16):
        self.disp = Conv(store, f'{name}.disp', 3, mid, 3)
        self.select = Conv(store, f'{name}.select', feature_channels + mid, 3, 3, init='zero')

    def weights(self, initial: Sequence[Tensor], f_l4: Tensor) -> FusionWeights:
        d0 = concat([reshape(d, (d.shape[0], 1) + d.shape[1:]) for d in initial], axis=1)
        f_d = relu(self.disp(d0))
        s = sigmoid(self.select(concat([f_l4, f_d], axis=1)))
        return FusionWeights(s[:, 0:1], s[:, 1:2], s[:, 2:3])


def fuse_geometry(lookup: GeometryLookup, weights: FusionWeights) -> Tensor:
    """s_s⊙f^s + s_m⊙f^m + s_l⊙f^l, then the APC samples appended."""
    fused = (mul(weights.s_s, lookup.f_s) + mul(weights.s_m, lookup.f_m)
             + mul(weights.s_l, lookup.f_l))
    return concat([fused, lookup.f_apc], axis=1)


def fuse(lookup: GeometryLookup, geometry: GeometrySet, f_l4: Tensor, fusion: Optional[SelectiveFusion]) -> Tensor:
    if lookup.f_m is None:
        return concat([lookup.f_s, lookup.f_apc], axis=1)
    if fusion is None:
        return lookup.stacked()
    return fuse_geometry(lookup, fusion.weights(geometry.initial(), f_l4))


class ConvGRU:
    def __init__(self, store: ParameterStore, name: str, hidden: int, inputs: int):
        self.conv_z = Conv(store, f'{name}.convz', hidden + inputs, hidden, 3)
        self.conv_r = Conv(store, f'{name}.convr', hidden + inputs, hidden, 3)
        self.conv_h = Conv(store, f'{name}.convh', hidden + inputs, hidden, 3)

    def __call__(self, h: Tensor, context: ContextLevel, *inputs: Tensor) -> Tensor:
        x = list(inputs)
        hx = concat([h] + x, axis=1)
        z = sigmoid(self.conv_z(hx) + context.c_z)
        r = sigmoid(self.conv_r(hx) + context.c_r)
        q = tanh(self.conv_h(concat([mul(r, h)] + x, axis=1)) + context.c_h)
        return (1.0 - z) * h + z * q


class UpdateBlock:
    """Encoders, one to three ConvGRU levels and the residual-disparity decoder."""

    def __init__(self, store: ParameterStore, name: str, config: ModelConfig, geometry_channels: int):
        hid = config.hidden
        self.levels = config.gru_levels
        self.enc_g1 = Conv(store, f'{name}.encg1', geometry_channels, config.geo_encoder, 3)
        self.enc_g2 = Conv(store, f'{name}.encg2', config.geo_encoder, config.geo_encoder, 3)
        self.enc_d1 = Conv(store, f'{name}.encd1', 1, config.disp_encoder, 7)
        self.enc_d2 = Conv(store, f'{name}.encd2', config.disp_encoder, config.disp_encoder, 3)
        motion = config.geo_encoder + config.disp_encoder + 1
        self.gru04 = ConvGRU(store, f'{name}.gru04', hid, motion + (hid if self.levels > 1 else 0))
        self.gru08 = ConvGRU(store, f'{name}.gru08', hid, hid * (2 if self.levels > 2 else 1)) if self.levels > 1 else None
        self.gru16 = ConvGRU(store, f'{name}.gru16', hid, hid) if self.levels > 2 else None
        self.dec1 = Conv(store, f'{name}.dec1', hid, hid, 3)
        self.dec2 = Conv(store, f'{name}.dec2', hid, 1, 3)

    def encode(self, f_geo: Tensor, disparity: Tensor) -> Tensor:
        d = reshape(disparity, (disparity.shape[0], 1) + disparity.shape[1:])
        g = relu(self.enc_g2(relu(self.enc_g1(f_geo))))
        e = relu(self.enc_d2(relu(self.enc_d1(d))))
        return concat([g, e, d], axis=1)

    def decode(self, h: Tensor) -> Tensor:
        delta = self.dec2(relu(self.dec1(h)))
        return reshape(delta, (delta.shape[0],) + delta.shape[2:])

    def __call__(self, hidden: List[Tensor], context: ContextSet, f_geo: Tensor,
                 disparity: Tensor) -> Tuple[List[Tensor], Tensor]:
        hidden = list(hidden)
        if self.levels > 2:
            hidden[2] = self.gru16(hidden[2], context[2], avg_pool2d(hidden[1]))
        if self.levels > 1:
            extra = [upsample_nearest2d(hidden[2])] if self.levels > 2 else []
            hidden[1] = self.gru08(hidden[1], context[1], avg_pool2d(hidden[0]), *extra)
        x = self.encode(f_geo, disparity)
        extra = [upsample_nearest2d(hidden[1])] if self.levels > 1 else []
        hidden[0] = self.gru04(hidden[0], context[0], x, *extra)
        return hidden, self.decode(hidden[0])


def gru_step(hidden: List[Tensor], context: ContextSet, f_geo: Tensor, disparity: Tensor,
             block: UpdateBlock) -> Tuple[List[Tensor], Tensor, Tensor]:
    """One refinement: returns (h_k, Δd_k, d_k) with d_k = max(d_{k−1} + Δd_k, 0)."""
    hidden, delta = block(hidden, context, f_geo, disparity)
    return hidden, delta, clamp_min(disparity + delta, 0.0)


def _neighbourhood(disparity: Tensor) -> Tensor:
    """N×H×W → N×9×H×W, the 3×3 neighbourhood with edge replication (row-major, centre at 4)."""
    _, h, w = disparity.shape
    rows = np.arange(h)
    cols = np.arange(w)
    taps = []
    for dy in (-1, 0, 1):
        shifted = index_select(disparity, 1, np.clip(rows + dy, 0, h - 1))
        for dx in (-1, 0, 1):
            tap = index_select(shifted, 2, np.clip(cols + dx, 0, w - 1))
            taps.append(reshape(tap, (tap.shape[0], 1, h, w)))
    return concat(taps, axis=1)


def convex_upsample(disparity: Tensor, mask: Tensor, factor: int = 4) -> Tensor:
    """Full-resolution disparity as ``factor``·Σ_j w_j·d(neighbour_j); ``mask`` is N×9×H×W, softmax-normalised."""
    n, h, w = disparity.shape
    if mask.shape != (n, 9, h * factor, w * factor):
        raise ValueError(f"mask shape {mask.shape} does not match disparity {disparity.shape} ×{factor}")
    taps = upsample_nearest2d(_neighbourhood(disparity), factor)
    return sum_(mul(mask, taps), axis=1) * float(factor)


class ConvexUpsampler:
    """Weights from the hidden state lifted to 1/2 resolution and concatenated with f_l,2."""

    def __init__(self, store: ParameterStore, name: str, hidden: int, f2_channels: int, mid: int = 32):
        self.lift = Conv(store, f'{name}.lift', hidden, mid, 3)
        self.fuse = Conv(store, f'{name}.fuse', mid + f2_channels, mid, 3)
        self.mask = Conv(store, f'{name}.mask', mid, 9 * 4, 1)

    def weights(self, hidden: Tensor, f_l2: Tensor) -> Tensor:
        feat = upsample_nearest2d(relu(self.lift(hidden)), 2)
        feat = relu(self.fuse(concat([feat, f_l2], axis=1)))
        return softmax(pixel_shuffle(self.mask(feat), 2), axis=1)

    def __call__(self, disparity: Tensor, hidden: Tensor, f_l2: Tensor) -> Tensor:
        return convex_upsample(disparity, self.weights(hidden, f_l2))


def upsample(disparity: Tensor, hidden: Tensor, f_l2: Tensor, upsampler: ConvexUpsampler) -> Tensor:
    return upsampler(disparity, hidden, f_l2)


def iterate(geometry: GeometrySet, apc: Sequence[Tensor], context: ContextSet, f_l4: Tensor, f_l2: Tensor,
            block: UpdateBlock, fusion: Optional[SelectiveFusion], upsampler: ConvexUpsampler,
            iters: int, lookup: LookupConfig, detach: bool = True,
            upsample_every: bool = True) -> DisparityField:
    """Run ``iters`` refinements starting from d_0^s."""
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    field_ = DisparityField()
    hidden = [level.h0 for level in context.levels]
    disparity = geometry.d0_s
    for k in range(iters):
        if detach:
            disparity = disparity.detach()
        f_geo = fuse(lookup_geometry(geometry, apc, disparity, lookup), geometry, f_l4, fusion)
        hidden, _, disparity = gru_step(hidden, context, f_geo, disparity, block)
        field_.history.append(disparity)
        if upsample_every or k == iters - 1:
            field_.upsampled_history.append(upsampler(disparity, hidden[0], f_l2))
    field_.hidden = hidden
    return field_
