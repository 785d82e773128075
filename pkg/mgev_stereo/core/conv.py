"""Convolutions, pooling and resampling built on the tensor tape.

Kernels loop over kernel offsets and contract the channel axis with
``np.tensordot``; the adjoints scatter back through the same strided windows.
All padding is zero padding.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import Tensor, _result, mean, reshape, transpose

IntOrTuple = Union[int, Sequence[int]]


def _as_tuple(value: IntOrTuple, n: int) -> Tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        if len(value) != n:
            raise ValueError(f"expected {n} values, got {tuple(value)}")
        return tuple(int(v) for v in value)
    return (int(value),) * n


def _window(start: int, stride: int, count: int) -> slice:
    return slice(start, start + stride * (count - 1) + 1, stride)


def _check_input(x: Tensor, weight: Tensor, n_spatial: int, channel_axis: int, op: str) -> None:
    if x.ndim != n_spatial + 2:
        raise ValueError(f"{op} expects a rank-{n_spatial + 2} input, got shape {x.shape}")
    if weight.ndim != n_spatial + 2:
        raise ValueError(f"{op} expects a rank-{n_spatial + 2} kernel, got shape {weight.shape}")
    if weight.shape[channel_axis] != x.shape[1]:
        raise ValueError(f"{op} channel mismatch: input {x.shape} vs kernel {weight.shape}")


def _conv(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: IntOrTuple,
          padding: IntOrTuple, n_spatial: int, op: str) -> Tensor:
    _check_input(x, weight, n_spatial, 1, op)
    strides = _as_tuple(stride, n_spatial)
    pads = _as_tuple(padding, n_spatial)
    if min(strides) < 1:
        raise ValueError(f"{op} stride must be >= 1, got {strides}")
    kernel = weight.shape[2:]
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(p, p) for p in pads])
    out_size = tuple((xp.shape[2 + i] - kernel[i]) // strides[i] + 1 for i in range(n_spatial))
    if min(out_size) < 1:
        raise ValueError(f"{op} kernel {kernel} larger than padded input {xp.shape[2:]}")

    w = weight.data
    out = np.zeros((x.shape[0],) + out_size + (w.shape[0],), dtype=x.dtype)
    windows = []
    for k in np.ndindex(*kernel):
        sl = (slice(None), slice(None)) + tuple(
            _window(k[i], strides[i], out_size[i]) for i in range(n_spatial))
        windows.append((k, sl))
        out += np.tensordot(xp[sl], w[(slice(None), slice(None)) + k], axes=([1], [1]))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    if bias is not None:
        out += bias.data.reshape((1, -1) + (1,) * n_spatial)

    spatial_axes = tuple(range(2, 2 + n_spatial))
    unpad = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pads, x.shape[2:]))

    def backward(g, needs):
        gx = gw = gb = None
        if needs[0]:
            gt = np.moveaxis(g, 1, -1)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for k, sl in windows:
                contrib = np.tensordot(gt, w[(slice(None), slice(None)) + k], axes=([-1], [0]))
                gxp[sl] += np.moveaxis(contrib, -1, 1)
            gx = gxp[unpad]
        if needs[1]:
            gw = np.zeros(w.shape, dtype=g.dtype)
            axes = (0,) + spatial_axes
            for k, sl in windows:
                gw[(slice(None), slice(None)) + k] = np.tensordot(g, xp[sl], axes=(axes, axes))
        if bias is not None and needs[2]:
            gb = g.sum(axis=(0,) + spatial_axes)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, op)


def _conv_transposed(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: IntOrTuple,
                     padding: IntOrTuple, n_spatial: int, op: str) -> Tensor:
    _check_input(x, weight, n_spatial, 0, op)
    strides = _as_tuple(stride, n_spatial)
    pads = _as_tuple(padding, n_spatial)
    if min(strides) < 1:
        raise ValueError(f"{op} stride must be >= 1, got {strides}")
    kernel = weight.shape[2:]
    in_size = x.shape[2:]
    full = tuple((in_size[i] - 1) * strides[i] + kernel[i] for i in range(n_spatial))
    out_size = tuple(full[i] - 2 * pads[i] for i in range(n_spatial))
    if min(out_size) < 1:
        raise ValueError(f"{op} padding {pads} leaves an empty output")

    w = weight.data
    xt = np.moveaxis(x.data, 1, -1)
    out_full = np.zeros((x.shape[0],) + full + (w.shape[1],), dtype=x.dtype)
    windows = []
    for k in np.ndindex(*kernel):
        sl = (slice(None),) + tuple(_window(k[i], strides[i], in_size[i]) for i in range(n_spatial))
        windows.append((k, sl))
        out_full[sl] += np.tensordot(xt, w[(slice(None), slice(None)) + k], axes=([-1], [0]))
    crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(pads, out_size))
    out = np.ascontiguousarray(np.moveaxis(out_full[crop], -1, 1))
    if bias is not None:
        out += bias.data.reshape((1, -1) + (1,) * n_spatial)

    lead_axes = tuple(range(0, 1 + n_spatial))

    def backward(g, needs):
        gx = gw = gb = None
        g_full = np.zeros(out_full.shape, dtype=g.dtype)
        g_full[crop] = np.moveaxis(g, 1, -1)
        if needs[0]:
            gxt = np.zeros(xt.shape, dtype=g.dtype)
            for k, sl in windows:
                gxt += np.tensordot(g_full[sl], w[(slice(None), slice(None)) + k], axes=([-1], [1]))
            gx = np.moveaxis(gxt, -1, 1)
        if needs[1]:
            gw = np.zeros(w.shape, dtype=g.dtype)
            for k, sl in windows:
                gw[(slice(None), slice(None)) + k] = np.tensordot(xt, g_full[sl], axes=(lead_axes, lead_axes))
        if bias is not None and needs[2]:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + n_spatial)))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, op)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: IntOrTuple = 1, padding: IntOrTuple = 0) -> Tensor:
    """``x`` is N×C×H×W, ``kernel`` is O×C×kh×kw."""
    return _conv(x, kernel, bias, stride, padding, 2, 'conv2d')


def conv3d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: IntOrTuple = 1, padding: IntOrTuple = 0) -> Tensor:
    """``x`` is N×C×D×H×W, ``kernel`` is O×C×kd×kh×kw."""
    return _conv(x, kernel, bias, stride, padding, 3, 'conv3d')


def conv3d_transposed(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
                      stride: IntOrTuple = 2, padding: IntOrTuple = 1) -> Tensor:
    """Adjoint of conv3d; ``kernel`` is C_in×C_out×kd×kh×kw.

    With a 4×4×4 kernel, stride 2 and padding 1 the output doubles D, H and W.
    """
    return _conv_transposed(x, kernel, bias, stride, padding, 3, 'conv3d_transposed')


def avg_pool2d(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"avg_pool2d needs dims divisible by {factor}, got {x.shape}")
    return mean(reshape(x, (n, c, h // factor, factor, w // factor, factor)), axis=(3, 5))


def avg_pool_axis(x: Tensor, axis: int, factor: int = 2) -> Tensor:
    """Average-pool ``x`` by ``factor`` along a single axis."""
    axis = axis % x.ndim
    size = x.shape[axis]
    if size % factor:
        raise ValueError(f"axis {axis} of {x.shape} not divisible by {factor}")
    shape = x.shape[:axis] + (size // factor, factor) + x.shape[axis + 1:]
    return mean(reshape(x, shape), axis=axis + 1)


def upsample_nearest2d(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g, needs):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _result(out, (x,), backward, 'upsample_nearest2d')


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """N×(C·r·r)×H×W → N×C×(H·r)×(W·r)."""
    n, c, h, w = x.shape
    if c % (factor * factor):
        raise ValueError(f"pixel_shuffle needs channels divisible by {factor * factor}, got {c}")
    oc = c // (factor * factor)
    y = reshape(x, (n, oc, factor, factor, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (n, oc, h * factor, w * factor))


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each (sample, channel) map to zero mean and unit variance."""
    axes = tuple(range(2, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=axes, keepdims=True) + eps)
    y = centered * inv

    def backward(g, needs):
        g_mean = g.mean(axis=axes, keepdims=True)
        gy_mean = (g * y).mean(axis=axes, keepdims=True)
        return (inv * (g - g_mean - y * gy_mean),)

    return _result(y.astype(x.dtype, copy=False), (x,), backward, 'instance_norm')
