"""Training objective: regularization loss on the initial disparities plus the iteration loss."""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .config import ModelConfig
from .tensor import Tensor, _lift, absolute, mul, sum_, where


@dataclass
class LossConfig:
    weights: Tuple[float, float, float] = (1.0, 0.5, 0.2)
    gamma: float = 0.9
    max_disparity: float = 768.0

    def __post_init__(self):
        if min(self.weights) <= 0:
            raise ValueError(f"loss weights must be positive, got {self.weights}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")

    @classmethod
    def from_config(cls, config: ModelConfig) -> 'LossConfig':
        return cls(tuple(config.loss_weights), config.gamma, float(config.max_disparity))


def valid_mask(gt: np.ndarray, max_disparity: float, extra: Optional[np.ndarray] = None) -> np.ndarray:
    """Finite ground truth with 0 <= gt < max_disparity."""
    gt = np.asarray(gt)
    with np.errstate(invalid='ignore'):
        mask = np.isfinite(gt) & (gt >= 0) & (gt < max_disparity)
    if extra is not None:
        mask &= np.asarray(extra, dtype=bool)
    return mask


def _masked_mean(values: Tensor, mask: np.ndarray) -> Tensor:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("loss mask selects no pixels")
    return sum_(where(mask, values, 0.0)) * (1.0 / count)


def _error(pred: Tensor, gt) -> Tensor:
    gt = np.nan_to_num(np.asarray(gt.data if isinstance(gt, Tensor) else gt), nan=0.0, posinf=0.0, neginf=0.0)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred - _lift(gt, pred)


def smooth_l1(pred: Tensor, gt, mask: np.ndarray) -> Tensor:
    """Masked mean of 0.5·e² where |e| < 1, |e| − 0.5 elsewhere."""
    e = _error(pred, gt)
    small = np.abs(e.data) < 1.0
    return _masked_mean(where(small, mul(e, e) * 0.5, absolute(e) - 0.5), mask)


def l1(pred: Tensor, gt, mask: np.ndarray) -> Tensor:
    return _masked_mean(absolute(_error(pred, gt)), mask)


def downsample_gt(gt: np.ndarray, factor: int = 4) -> np.ndarray:
    """Stride sampling of the last two axes; values stay in full-resolution px."""
    return np.asarray(gt)[..., ::factor, ::factor]


def reg_loss(d0_s: Tensor, d0_m: Optional[Tensor], d0_l: Optional[Tensor], gt: np.ndarray,
             cfg: LossConfig, mask: Optional[np.ndarray] = None) -> Tensor:
    """λ_s·L^s + λ_m·L^m + λ_l·L^l on quarter-resolution maps in full-resolution px.

    ``gt`` (and ``mask``) are at the same resolution as the predictions.
    """
    if mask is None:
        mask = valid_mask(gt, cfg.max_disparity)
    total = None
    for weight, pred in zip(cfg.weights, (d0_s, d0_m, d0_l)):
        if pred is None:
            continue
        term = smooth_l1(pred, gt, mask) * float(weight)
        total = term if total is None else total + term
    return total


def iter_loss(history: Sequence[Tensor], gt: np.ndarray, gamma: float,
              mask: Optional[np.ndarray] = None, max_disparity: float = np.inf) -> Tensor:
    """Σ_i γ^(N−i)·mean|d_i − gt| over masked pixels; the last iterate has weight 1."""
    if not history:
        raise ValueError("iteration loss needs at least one prediction")
    if mask is None:
        mask = valid_mask(gt, max_disparity)
    n = len(history)
    total = None
    for i, pred in enumerate(history, 1):
        term = l1(pred, gt, mask) * float(gamma ** (n - i))
        total = term if total is None else total + term
    return total


def total_loss(l_reg: Tensor, l_iter: Tensor) -> Tensor:
    total = l_reg + l_iter
    if not np.all(np.isfinite(total.data)):
        raise FloatingPointError(f"non-finite loss: l_reg={float(l_reg.item())}, l_iter={float(l_iter.item())}")
    return total


def stereo_loss(prediction, gt: np.ndarray, cfg: LossConfig,
                mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """(l_reg, l_iter, l_total) for a model prediction against full-resolution N×H×W ground truth."""
    full_mask = valid_mask(gt, cfg.max_disparity, mask)
    l_reg = reg_loss(*prediction.geometry.initial_px(), downsample_gt(gt), cfg, downsample_gt(full_mask))
    l_iter = iter_loss(prediction.field.upsampled_history, gt, cfg.gamma, full_mask)
    return l_reg, l_iter, total_loss(l_reg, l_iter)
