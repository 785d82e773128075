"""Loading trained models, running them on files, dumping intermediates and sweeping iteration counts."""

import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .checkpoint import load_checkpoint
from .config import parse_config
from .costvolume import dump_volume
from .io import load_sample, read_manifest, save_iterations_netcdf, save_volumes_netcdf, write_pfm
from .metrics import average_reports, evaluate
from .model import MGEVStereo, StereoPrediction

logger = logging.getLogger(__name__)


def load_model(checkpoint: str, config_path: Optional[str] = None) -> MGEVStereo:
    """Rebuild the architecture from the ``<ckpt>.json`` sidecar (or ``config_path``) and load weights."""
    config_path = config_path or f"{checkpoint}.json"
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"Model configuration not found: {config_path}")
    model = MGEVStereo(parse_config(config_path))
    model.load_state_dict(load_checkpoint(checkpoint))
    return model


def dump_iterations(out_dir: str, iterations: Sequence[np.ndarray]) -> List[str]:
    """One PFM per iteration plus an ``iterations.nc`` cube."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for k, disparity in enumerate(iterations, 1):
        path = os.path.join(out_dir, f'iter_{k:03d}.pfm')
        write_pfm(path, disparity)
        paths.append(path)
    save_iterations_netcdf(os.path.join(out_dir, 'iterations.nc'), iterations)
    return paths


def dump_volumes(out_dir: str, prediction: StereoPrediction) -> List[str]:
    """PFM stacks of every cost and geometry volume plus a ``volumes.nc`` file."""
    named = dict(prediction.volumes.volumes())
    geometry = prediction.geometry
    for name, vol in (('g_s', geometry.g_s), ('g_m', geometry.g_m), ('g_l', geometry.g_l)):
        if vol is not None:
            named[name] = vol
    paths = []
    for name, vol in named.items():
        paths += dump_volume(vol, os.path.join(out_dir, name), name)
    save_volumes_netcdf(os.path.join(out_dir, 'volumes.nc'), {k: v.data[0] for k, v in named.items()})
    return paths


def predict_dataset(model: MGEVStereo, data_dir: str, iters: int,
                    limit: Optional[int] = None) -> List[Dict[str, np.ndarray]]:
    manifest = read_manifest(data_dir)
    if limit is not None:
        manifest = manifest.iloc[:limit]
    results = []
    for _, record in manifest.iterrows():
        sample = load_sample(data_dir, record)
        out = model.predict(sample['left'], sample['right'], iters)
        results.append({'pred': out['disparity'], 'gt': sample['gt'], 'mask': sample['mask']})
    return results


def sweep(model: MGEVStereo, data_dir: str, iteration_counts: Sequence[int],
          ranges: Sequence[int], limit: Optional[int] = None) -> pd.DataFrame:
    """Held-out EPE / Bad 3.0 / D1 per iteration count."""
    rows = []
    for iters in iteration_counts:
        reports = [evaluate(r['pred'], r['gt'], None, ranges)
                   for r in predict_dataset(model, data_dir, iters, limit)]
        report = average_reports(reports)
        rows.append({'iters': iters, 'epe': report.epe, 'bad3': report.bad[3], 'd1': report.d1})
        logger.info(f"  iters={iters:3d} | EPE {report.epe:.4f} | Bad3 {report.bad[3]:.2f}%")
    return pd.DataFrame(rows)
