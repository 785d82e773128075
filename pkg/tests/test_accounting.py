"""Memory and FLOP accounting."""

import pytest

from mgev_stereo.core.accounting import account, compare, rt_counterpart
from mgev_stereo.core.config import ModelConfig


def test_published_ranges_bins():
    report = account(ModelConfig(), 256, 768, with_parameters=False)
    assert report.bins == (48, 48, 48)
    assert report.mgev_bins == 144
    assert report.full_range_bins == 192
    assert report.mgev_elements == 144 * 8 * 64 * 192
    assert report.volume_bytes == 4 * report.mgev_elements
    assert report.volume_bytes < report.full_range_bytes


def test_elements_linear_in_groups():
    base = account(ModelConfig(), 256, 768, with_parameters=False)
    doubled = account(ModelConfig(groups=16), 256, 768, with_parameters=False)
    assert doubled.mgev_elements == 2 * base.mgev_elements
    assert doubled.full_range_elements == 2 * base.full_range_elements


def test_rt_counterpart_is_cheaper():
    config = ModelConfig()
    rt = rt_counterpart(config)
    assert rt.variant == 'rt' and rt.ranges == (192,) and rt.hidden == 96
    full, fast = account(config, with_parameters=False), account(rt, with_parameters=False)
    assert fast.update_flops < full.update_flops
    assert fast.inference_flops < full.inference_flops
    assert fast.mgev_bins == 48
    assert rt_counterpart(rt) is rt


def test_compare_columns():
    frame = compare(ModelConfig(), with_parameters=False)
    assert list(frame.columns) == ['quantity', 'full', 'rt']
    row = frame.set_index('quantity').loc['mgev_bins']
    assert row['full'] == 144 and row['rt'] == 48


def test_rejects_unaligned_dims():
    with pytest.raises(ValueError, match='divisible by 32'):
        account(ModelConfig(), 250, 768, with_parameters=False)
