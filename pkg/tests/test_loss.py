"""Regularization, iteration and total losses."""

import numpy as np
import pytest

from mgev_stereo.core.loss import (LossConfig, downsample_gt, iter_loss, l1, reg_loss, smooth_l1, total_loss,
                                   valid_mask)
from mgev_stereo.core.tensor import Tape, Tensor


def _single(value):
    return Tensor(np.array([[value]])), np.array([[0.0]]), np.ones((1, 1), dtype=bool)


def test_smooth_l1_examples():
    zero = Tensor(np.full((2, 3), 4.0))
    assert smooth_l1(zero, np.full((2, 3), 4.0), np.ones((2, 3), dtype=bool)).item() == 0.0
    assert smooth_l1(*_single(0.5)).item() == pytest.approx(0.125)
    assert smooth_l1(*_single(2.0)).item() == pytest.approx(1.5)


def test_empty_mask_rejected():
    with pytest.raises(ValueError, match='no pixels'):
        smooth_l1(Tensor(np.ones((2, 2))), np.zeros((2, 2)), np.zeros((2, 2), dtype=bool))


def test_valid_mask_rule():
    gt = np.array([[np.nan, -1.0, 0.0, 10.0, 127.9, 128.0, np.inf]])
    assert valid_mask(gt, 128).tolist() == [[False, False, True, True, True, False, False]]


def test_reg_loss_weights():
    cfg = LossConfig()
    gt = np.zeros((1, 2, 2))
    exact = Tensor(gt.copy())
    assert reg_loss(exact, exact, exact, gt, cfg).item() == 0.0
    off = Tensor(np.full((1, 2, 2), 1.5))  # smooth-L1 of 1.5 is 1.0
    assert reg_loss(off, off, off, gt, cfg).item() == pytest.approx(1.7)


def test_reg_loss_single_range_uses_first_weight():
    gt = np.zeros((1, 2, 2))
    off = Tensor(np.full((1, 2, 2), 1.5))
    assert reg_loss(off, None, None, gt, LossConfig()).item() == pytest.approx(1.0)


def test_iter_loss_examples():
    gt = np.zeros((1, 2, 2))
    first, second = Tensor(np.full((1, 2, 2), 1.0)), Tensor(np.full((1, 2, 2), -0.5))
    assert iter_loss([first], gt, 0.9).item() == pytest.approx(1.0)
    assert iter_loss([first, second], gt, 0.9).item() == pytest.approx(1.4)
    assert iter_loss([first] * 5, gt, 1.0).item() == pytest.approx(5.0)
    with pytest.raises(ValueError):
        iter_loss([], gt, 0.9)


def test_total_loss_sum_and_nan():
    assert total_loss(Tensor(1.7), Tensor(1.4)).item() == pytest.approx(3.1)
    assert total_loss(Tensor(0.0), Tensor(0.0)).item() == 0.0
    with pytest.raises(FloatingPointError, match='non-finite'):
        total_loss(Tensor(np.nan), Tensor(1.0))


def test_losses_ignore_unmasked_pixels(rng):
    pred = rng.normal(size=(2, 4))
    gt = rng.normal(size=(2, 4))
    mask = np.zeros((2, 4), dtype=bool)
    mask[:, :2] = True
    base = l1(Tensor(pred), gt, mask).item()
    pred2, gt2 = pred.copy(), gt.copy()
    pred2[:, 2:] = 1e6
    gt2[:, 2:] = np.nan
    assert l1(Tensor(pred2), gt2, mask).item() == base
    assert smooth_l1(Tensor(pred2), gt2, mask).item() == smooth_l1(Tensor(pred), gt, mask).item()


def test_losses_non_negative_and_differentiable(rng):
    pred = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    gt = rng.normal(size=(2, 3))
    with Tape() as tape:
        loss = smooth_l1(pred, gt, np.ones((2, 3), dtype=bool))
        tape.backward(loss)
    assert loss.item() >= 0
    e = pred.data - gt
    np.testing.assert_allclose(pred.grad, np.clip(e, -1, 1) / 6.0)


def test_downsample_gt_is_stride_sampling():
    gt = np.arange(64, dtype=float).reshape(1, 8, 8)
    np.testing.assert_array_equal(downsample_gt(gt), gt[:, ::4, ::4])
