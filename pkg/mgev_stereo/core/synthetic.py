"""Procedural random-dot stereo pairs with dense ground truth.

A sample is a stack of textured rectangles painted far to near. Layer 0 is a
full-frame background; every further layer is nearer and has a larger
disparity. A layer's disparity is ``a + b·x + c·y`` in left-image
coordinates: fronto-parallel layers have ``b = c = 0``, slanted ones a small
slope. The right view is rendered by inverse lookup into each layer's
texture, so integer-disparity layers reproduce left-view colours exactly.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .io import to_unit

logger = logging.getLogger(__name__)


@dataclass
class StereoSample:
    left: np.ndarray
    right: np.ndarray
    gt_disparity: np.ndarray
    occlusion_mask: np.ndarray
    seed: int = 0
    d_max: float = 0.0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.gt_disparity.shape


@dataclass
class _Layer:
    y0: int
    y1: int
    x0: int
    x1: int
    a: float
    b: float = 0.0
    c: float = 0.0
    integer: bool = True
    texture: Optional[np.ndarray] = field(default=None, repr=False)

    def disparity(self, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        return self.a + self.b * xs + self.c * ys


def _texture(rng: np.random.Generator, height: int, width: int, sigma: float, levels: int) -> np.ndarray:
    tex = rng.random((3, height, width))
    if sigma > 0:
        tex = np.stack([gaussian_filter(ch, sigma, mode='wrap') for ch in tex])
        lo, hi = tex.min(), tex.max()
        tex = (tex - lo) / max(hi - lo, 1e-12)
    if levels > 1:
        tex = np.round(tex * (levels - 1)) / (levels - 1)
    return tex


def _slanted(rng: np.random.Generator, layer: _Layer, lo: float, hi: float) -> None:
    """Give ``layer`` a small slope keeping its disparity inside [lo, hi] over the rectangle."""
    b = rng.uniform(-0.08, 0.08)
    c = rng.uniform(-0.04, 0.04)
    cy, cx = (layer.y0 + layer.y1 - 1) / 2.0, (layer.x0 + layer.x1 - 1) / 2.0
    a = layer.a - b * cx - c * cy
    corners_y = np.array([layer.y0, layer.y0, layer.y1 - 1, layer.y1 - 1], dtype=float)
    corners_x = np.array([layer.x0, layer.x1 - 1, layer.x0, layer.x1 - 1], dtype=float)
    d = a + b * corners_x + c * corners_y
    if d.min() >= lo and d.max() <= hi:
        layer.a, layer.b, layer.c = a, b, c


def generate_rds(seed: int, height: int, width: int, d_max: float, layers: int = 4,
                 fractional: float = 0.5, slanted: float = 0.5, texture_sigma: float = 0.7,
                 texture_levels: int = 0) -> StereoSample:
    """Deterministic stereo pair for ``seed``.

    ``fractional`` is the probability that a layer gets a non-integer
    disparity; ``slanted`` the probability that a fractional layer is slanted.
    """
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    if height < 1 or width < 1:
        raise ValueError(f"image dims must be positive, got {height}×{width}")
    if d_max < 0 or d_max > width / 2:
        raise ValueError(f"d_max={d_max} must lie in [0, width/2 = {width / 2}]")
    rng = np.random.default_rng(seed)
    tex_width = width + int(np.ceil(d_max)) + 2

    values = np.sort(rng.uniform(0.0, d_max, size=layers))
    stack: List[_Layer] = []
    for i, value in enumerate(values):
        if i == 0:
            y0, y1, x0, x1 = 0, height, 0, tex_width
        else:
            h = int(rng.integers(max(1, height // 4), max(2, height // 2) + 1))
            w = int(rng.integers(max(1, width // 4), max(2, width // 2) + 1))
            h, w = min(h, height), min(w, width)
            y0 = int(rng.integers(0, height - h + 1))
            x0 = int(rng.integers(0, width - w + 1))
            y1, x1 = y0 + h, x0 + w
        is_fractional = rng.random() < fractional
        a = float(value) if is_fractional else float(min(np.round(value), np.floor(d_max)))
        layer = _Layer(y0, y1, x0, x1, a)
        if is_fractional and i > 0 and rng.random() < slanted:
            _slanted(rng, layer, 0.0, float(d_max))
        layer.integer = layer.b == 0 and layer.c == 0 and float(layer.a).is_integer()
        layer.texture = _texture(rng, height, tex_width, texture_sigma, texture_levels)
        stack.append(layer)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    left = np.zeros((3, height, width))
    right = np.zeros((3, height, width))
    gt = np.zeros((height, width))
    label_l = np.full((height, width), -1)
    label_r = np.full((height, width), -1)

    for i, layer in enumerate(stack):
        inside_y = (ys >= layer.y0) & (ys < layer.y1)
        # left view: the texture sampled on the integer grid
        cover = inside_y & (xs >= layer.x0) & (xs < min(layer.x1, width))
        left[:, cover] = layer.texture[:, ys[cover].astype(int), xs[cover].astype(int)]
        gt[cover] = layer.disparity(ys[cover], xs[cover])
        label_l[cover] = i

        # right view: x_l − d(x_l, y) = x_r
        x_l = (xs + layer.a + layer.c * ys) / (1.0 - layer.b)
        cover = inside_y & (x_l >= layer.x0) & (x_l <= layer.x1 - 1)
        if layer.integer:
            cols = np.round(x_l[cover]).astype(int)
            right[:, cover] = layer.texture[:, ys[cover].astype(int), cols]
        else:
            coords = np.stack([ys[cover], x_l[cover]])
            right[:, cover] = np.stack([map_coordinates(ch, coords, order=1, mode='nearest')
                                        for ch in layer.texture])
        label_r[cover] = i

    x_r = np.round(xs - gt).astype(int)
    in_view = (x_r >= 0) & (x_r < width)
    rows = ys.astype(int)
    visible = np.zeros((height, width), dtype=bool)
    visible[in_view] = label_r[rows[in_view], x_r[in_view]] == label_l[in_view]

    sample = StereoSample(left=to_unit(left), right=to_unit(right),
                          gt_disparity=gt.astype(np.float32), occlusion_mask=visible,
                          seed=seed, d_max=float(d_max))
    logger.debug(f"Generated sample seed={seed}: {layers} layers, {100 * visible.mean():.1f}% visible")
    return sample
