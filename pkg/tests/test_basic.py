"""Basic tests."""

import json

import pytest


def test_import():
    """Test that package imports."""
    import mgev_stereo
    assert mgev_stereo.__version__ == "0.1.0"


def test_config(tmp_path):
    """Test config parser."""
    from mgev_stereo import parse_config

    path = tmp_path / 'test.txt'
    path.write_text(
        '# comment line\n'
        'variant = full\n'
        'ranges = 32, 64, 128\n'
        'hidden = 64   # inline comment\n'
        'lr = 1e-3\n'
        'crop = 64, 256\n'
        'detach_disparity = false\n'
    )
    config = parse_config(str(path))
    assert config.ranges == (32, 64, 128)
    assert config.hidden == 64
    assert config.lr == 0.001
    assert config.crop == (64, 256)
    assert config.detach_disparity is False
    assert config.multi_range
    assert config.max_disparity == 128


def test_config_rt_defaults(tmp_path):
    from mgev_stereo import parse_config

    path = tmp_path / 'rt.txt'
    path.write_text('variant = rt\n')
    config = parse_config(str(path))
    assert config.ranges == (192,)
    assert config.gru_levels == 1
    assert config.hidden == 96
    assert config.iters_infer == 6
    assert not config.multi_range


def test_config_json_roundtrip(tmp_path, config):
    from mgev_stereo import parse_config

    path = tmp_path / 'model.json'
    config.save(str(path))
    assert json.loads(path.read_text())['ranges'] == [32, 64, 128]
    assert parse_config(str(path)) == config


def test_config_rejects_unknown_key(tmp_path):
    from mgev_stereo import parse_config

    path = tmp_path / 'bad.txt'
    path.write_text('ranges = 32, 64, 128\nlearning_rate = 0.1\n')
    with pytest.raises(ValueError, match='learning_rate'):
        parse_config(str(path))


@pytest.mark.parametrize('line, message', [
    ('crop = 60, 128', 'divisible by 32'),
    ('ranges = 64, 32, 128', 'increasing'),
    ('gamma = 1.5', 'gamma'),
    ('variant = fast', 'variant'),
])
def test_config_validation(tmp_path, line, message):
    from mgev_stereo import parse_config

    path = tmp_path / 'bad.txt'
    path.write_text(line + '\n')
    with pytest.raises(ValueError, match=message):
        parse_config(str(path))


def test_rt_config_invariants():
    from mgev_stereo.core.config import ModelConfig

    with pytest.raises(ValueError, match='hidden'):
        ModelConfig(variant='rt', ranges=(192,), gru_levels=1, hidden=128).validate()
    with pytest.raises(ValueError, match='single range'):
        ModelConfig(variant='rt', ranges=(192, 384, 768), gru_levels=1, hidden=96).validate()


def test_config_missing_file():
    from mgev_stereo import parse_config

    with pytest.raises(FileNotFoundError):
        parse_config('does_not_exist.txt')


def test_shipped_presets():
    from pathlib import Path

    from mgev_stereo import parse_config

    configs = Path(__file__).resolve().parent.parent / 'configs'
    full = parse_config(str(configs / 'mgev_full.txt'))
    assert full.ranges == (192, 384, 768)
    assert full.iters_train == 22 and full.iters_infer == 16
    rt = parse_config(str(configs / 'mgev_rt.txt'))
    assert rt.variant == 'rt' and rt.iters_infer == 6
    assert parse_config(str(configs / 'toy_single.txt')).ranges == (32,)
    assert parse_config(str(configs / 'toy_multi.txt')).crop == (64, 256)


def test_input_padder_edge_replication():
    import numpy as np
    from mgev_stereo.utils.padding import InputPadder

    image = np.arange(2 * 30 * 40, dtype=float).reshape(2, 30, 40)
    padder = InputPadder(image.shape, 32)
    padded = padder.pad(image)
    assert padded.shape == (2, 32, 64)
    assert np.all(padded[:, 31, :40] == image[:, 29, :])
    assert np.all(padded[:, :30, 63] == image[:, :, 39])
    assert np.array_equal(padder.unpad(padded), image)


def test_worker_count(monkeypatch):
    from mgev_stereo.utils.workers import prefetch, worker_count

    assert worker_count(deterministic=True) == 1
    monkeypatch.setenv('MGEV_THREADS', '3')
    assert worker_count() == 3
    monkeypatch.setenv('MGEV_THREADS', '0')
    with pytest.raises(ValueError, match='MGEV_THREADS'):
        worker_count()
    assert list(prefetch(lambda x: x * x, range(6), workers=3)) == [0, 1, 4, 9, 16, 25]
    assert list(prefetch(lambda x: x + 1, range(3), workers=1)) == [1, 2, 3]
