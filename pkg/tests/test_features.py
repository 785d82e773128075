"""Feature and context networks."""

import numpy as np
import pytest

from conftest import tiny_config
from mgev_stereo.core.config import ModelConfig
from mgev_stereo.core.features import (ContextNetwork, FeatureContext, FeatureNetwork, extract_context,
                                       extract_features)
from mgev_stereo.core.layers import ParameterStore
from mgev_stereo.core.tensor import Tensor


def test_feature_pyramid_shapes():
    config = ModelConfig(dtype='f64')
    net = FeatureNetwork(ParameterStore(0, 'f64'), 'fnet', config)
    pyramid = extract_features(Tensor(np.random.default_rng(0).random((3, 64, 128))), net)
    assert pyramid[4].shape == (1, 96, 16, 32)
    for scale, channels in zip((2, 4, 8, 16, 32), config.feature_channels):
        assert pyramid[scale].shape == (1, channels, 64 // scale, 128 // scale)


def test_context_shapes_and_range():
    config = ModelConfig(dtype='f64')
    net = ContextNetwork(ParameterStore(0, 'f64'), 'cnet', config)
    context = extract_context(Tensor(np.random.default_rng(0).random((3, 64, 128))), net)
    assert len(context) == 3
    assert context[2].c_z.shape == (1, 128, 4, 8)
    for level, scale in zip(context.levels, (4, 8, 16)):
        assert level.h0.shape == level.c_h.shape == (1, 128, 64 // scale, 128 // scale)
        assert np.all(np.abs(level.h0.data) < 1.0)


def test_shared_weights_give_identical_features(config, rng):
    net = FeatureNetwork(ParameterStore(0, 'f64'), 'fnet', config)
    image = rng.random((1, 3, 32, 64))
    left, right = net(Tensor(image)), net(Tensor(image.copy()))
    assert np.array_equal(left[4].data, right[4].data)


def test_rejects_non_divisible_dims(config):
    net = FeatureNetwork(ParameterStore(0, 'f64'), 'fnet', config)
    with pytest.raises(ValueError, match='pad by 24×0'):
        net(Tensor(np.zeros((3, 40, 64))))


def test_receptive_field_locality(rng):
    config = tiny_config(feature_norm='none')
    net = FeatureNetwork(ParameterStore(0, 'f64'), 'fnet', config)
    image = rng.random((1, 3, 256, 256))
    base = net(Tensor(image))[4].data
    image[0, :, 2, 2] += 1.0
    changed = np.abs(net(Tensor(image))[4].data - base).max(axis=(0, 1)) > 0
    # the far corner of the 64×64 map lies outside every path from pixel (2, 2)
    assert changed[:8, :8].any()
    assert not changed[-1, -1]


def test_feature_context_for_rt(rt_config, rng):
    store = ParameterStore(0, 'f64')
    pyramid = FeatureNetwork(store, 'fnet', rt_config)(Tensor(rng.random((1, 3, 32, 64))))
    context = FeatureContext(store, 'cnet', rt_config)(pyramid)
    assert len(context) == 1
    assert context[0].h0.shape == (1, 96, 8, 16)


def test_contrast_changes_values_not_shapes(config, rng):
    net = ContextNetwork(ParameterStore(0, 'f64'), 'cnet', config)
    image = rng.random((1, 3, 32, 64))
    a, b = net(Tensor(image)), net(Tensor(2.0 * image))
    for la, lb in zip(a.levels, b.levels):
        assert la.h0.shape == lb.h0.shape
        assert np.all(np.isfinite(lb.h0.data))
    assert not np.allclose(a[0].h0.data, b[0].h0.data)
