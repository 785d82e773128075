"""Shared tiny configurations and numeric helpers."""

import numpy as np
import pytest

from mgev_stereo.core.config import ModelConfig
from mgev_stereo.core.tensor import Tape, Tensor


def tiny_config(**changes) -> ModelConfig:
    """A full three-range model small enough for 32×64 images in f64."""
    base = dict(
        variant='full', ranges=(32, 64, 128), groups=4,
        feature_channels=(8, 8, 8, 8, 8), encoder_channels=(8, 8, 8, 8, 8),
        hidden=8, gru_levels=3, reg_channels=(4, 4, 4), reg_stem=4,
        geo_encoder=8, disp_encoder=4, radius=1, apc_levels=2,
        iters_train=2, iters_infer=2, steps=10, batch=1, crop=(32, 64),
        dtype='f64', checkpoint_every=5,
    )
    base.update(changes)
    return ModelConfig(**base).validate()


def tiny_rt_config(**changes) -> ModelConfig:
    base = dict(ranges=(32,), gru_levels=1, hidden=96, variant='rt')
    base.update(changes)
    return tiny_config(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def rt_config():
    return tiny_rt_config()


def numeric_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn`` w.r.t. every element of ``x`` (modified in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=['multi_index'])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        f_plus = fn()
        x[idx] = old - h
        f_minus = fn()
        x[idx] = old
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def check_grad(op, *arrays, tol: float = 1e-4, seed: int = 0):
    """Compare taped gradients of ``sum(op(*tensors) * w)`` with finite differences."""
    weights = None
    tensors = [Tensor(a, requires_grad=True) for a in arrays]

    def loss_value():
        out = op(*[Tensor(t.data) for t in tensors])
        return float((out.data * weights).sum())

    with Tape() as tape:
        out = op(*tensors)
        weights = np.random.default_rng(seed).normal(size=out.shape)
        loss = (out * weights).sum()
        tape.backward(loss)
    for t in tensors:
        expected = numeric_grad(loss_value, t.data)
        err = np.abs(t.grad - expected).max() / max(1.0, np.abs(expected).max())
        assert err < tol, f"relative gradient error {err:.2e}"


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run the long training experiments and 50-step determinism check')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long CPU training runs, enabled with --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
