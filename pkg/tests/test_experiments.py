"""Desk-scale training runs on random-dot data (enabled with ``--runslow``).

Each test writes its measured table to ``$MGEV_RESULTS_DIR`` (default: the
test's temporary directory) so the numbers can be copied into the README.
"""

import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from mgev_stereo.cli import main
from mgev_stereo.core.config import parse_config
from mgev_stereo.core.inference import load_model, predict_dataset, sweep
from mgev_stereo.core.io import save_table
from mgev_stereo.core.metrics import average_reports, evaluate
from mgev_stereo.core.trainer import StereoTrainer

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'
SWEEP_ITERS = [1, 2, 4, 8, 16]


def _results_dir(fallback) -> str:
    out = os.environ.get('MGEV_RESULTS_DIR', str(fallback))
    os.makedirs(out, exist_ok=True)
    return out


def _gen(out: Path, count: int, width: int, dmax: int, seed: int) -> str:
    assert main(['--quiet', 'gen', '--out', str(out), '--count', str(count), '--height', '64',
                 '--width', str(width), '--dmax', str(dmax), '--seed', str(seed)]) == 0
    return str(out)


def _train(config, data: str, ckpt: Path) -> str:
    assert StereoTrainer(config, data, str(ckpt)).run() == 'COMPLETE'
    return str(ckpt)


def _epe_above(model, data: str, threshold: float) -> float:
    reports = []
    for result in predict_dataset(model, data, model.config.iters_infer):
        far = np.isfinite(result['gt']) & (result['gt'] > threshold)
        if far.any():
            reports.append(evaluate(result['pred'], result['gt'], far))
    return average_reports(reports).epe


@pytest.fixture(scope='module')
def single_range_run(tmp_path_factory):
    root = tmp_path_factory.mktemp('single')
    train = _gen(root / 'train', 512, 128, 24, 0)
    test = _gen(root / 'test', 64, 128, 24, 1)
    ckpt = _train(parse_config(str(CONFIGS / 'toy_single.txt')), train, root / 'single.ckpt')
    frame = sweep(load_model(ckpt), test, SWEEP_ITERS, [8, 16, 24, 32])
    save_table(frame, os.path.join(_results_dir(root), 'toy_single_sweep.csv'))
    return frame


def test_single_range_toy_accuracy(single_range_run):
    row = single_range_run.set_index('iters').loc[8]
    assert row['epe'] < 1.5
    assert row['bad3'] < 10.0


def test_epe_non_increasing_over_iterations(single_range_run):
    epe = single_range_run.set_index('iters').loc[SWEEP_ITERS, 'epe'].tolist()
    for before, after in zip(epe, epe[1:]):
        assert after <= 1.05 * before


def test_multi_range_beats_single_range_on_large_disparities(tmp_path_factory):
    root = tmp_path_factory.mktemp('multi')
    train = _gen(root / 'train', 512, 256, 96, 2)
    test = _gen(root / 'test', 64, 256, 96, 3)

    multi_config = parse_config(str(CONFIGS / 'toy_multi.txt'))
    single_config = parse_config(str(CONFIGS / 'toy_single.txt')).derive(crop=multi_config.crop,
                                                                          steps=multi_config.steps)
    multi = load_model(_train(multi_config, train, root / 'multi.ckpt'))
    single = load_model(_train(single_config, train, root / 'single.ckpt'))

    overall = average_reports([evaluate(r['pred'], r['gt'])
                               for r in predict_dataset(multi, test, multi.config.iters_infer)])
    far_multi, far_single = _epe_above(multi, test, 32.0), _epe_above(single, test, 32.0)
    frame = pd.DataFrame([{'model': 'multi', 'epe': overall.epe, 'epe_gt_over_32': far_multi},
                          {'model': 'single', 'epe': np.nan, 'epe_gt_over_32': far_single}])
    save_table(frame, os.path.join(_results_dir(root), 'toy_multi_vs_single.csv'))

    assert overall.epe < 3.0
    assert far_multi <= 0.7 * far_single
