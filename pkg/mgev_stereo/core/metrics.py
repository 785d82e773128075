"""End-point error, Bad-k, D1 and per-range buckets."""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

BAD_THRESHOLDS = (1, 2, 3, 4)
DEFAULT_BUCKETS = (192, 384, 512, 768)


@dataclass
class MetricsReport:
    epe: float
    bad: Dict[int, float]
    d1: float
    count: int
    buckets: Dict[int, float] = field(default_factory=dict)
    bucket_counts: Dict[int, int] = field(default_factory=dict)
    bucket_bad: Dict[int, Dict[int, float]] = field(default_factory=dict)

    def to_row(self, prefix: str = '') -> Dict[str, float]:
        row = {f'{prefix}epe': self.epe}
        row.update({f'{prefix}bad{k}': v for k, v in self.bad.items()})
        row[f'{prefix}d1'] = self.d1
        for t, v in self.buckets.items():
            row[f'{prefix}epe_lt{t}'] = v
            for k, b in self.bucket_bad.get(t, {}).items():
                row[f'{prefix}bad{k}_lt{t}'] = b
            row[f'{prefix}n_lt{t}'] = self.bucket_counts[t]
        row[f'{prefix}pixels'] = self.count
        return row


def evaluate(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None,
             ranges: Sequence[int] = DEFAULT_BUCKETS) -> MetricsReport:
    """Metrics over pixels where ``mask`` holds and the ground truth is finite.

    Bad k is the percentage with |error| > k px. D1 follows the KITTI 2015
    rule: error above 3 px and above 5% of the ground truth. A range bucket
    with no pixels reports NaN.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = np.isfinite(gt)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.shape:
            raise ValueError(f"mask {mask.shape} and ground truth {gt.shape} differ")
        valid &= mask
    count = int(valid.sum())
    if count == 0:
        raise ValueError("evaluation mask selects no pixels")

    g = gt[valid]
    err = np.abs(pred[valid] - g)
    bad = {k: 100.0 * float(np.mean(err > k)) for k in BAD_THRESHOLDS}
    d1 = 100.0 * float(np.mean((err > 3.0) & (err > 0.05 * np.abs(g))))
    buckets, counts, bucket_bad = {}, {}, {}
    for t in ranges:
        sel = g < t
        counts[int(t)] = int(sel.sum())
        if sel.any():
            buckets[int(t)] = float(err[sel].mean())
            bucket_bad[int(t)] = {k: 100.0 * float(np.mean(err[sel] > k)) for k in BAD_THRESHOLDS}
        else:
            buckets[int(t)] = float('nan')
            bucket_bad[int(t)] = {k: float('nan') for k in BAD_THRESHOLDS}
    return MetricsReport(float(err.mean()), bad, d1, count, buckets, counts, bucket_bad)


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Per-sample mean; empty buckets are skipped and stay NaN when every sample lacks them."""
    if not reports:
        raise ValueError("no reports to average")
    first = reports[0]
    bad = {k: float(np.mean([r.bad[k] for r in reports])) for k in first.bad}
    buckets, counts, bucket_bad = {}, {}, {}
    for t in first.buckets:
        present = [r for r in reports if not np.isnan(r.buckets[t])]
        buckets[t] = float(np.mean([r.buckets[t] for r in present])) if present else float('nan')
        counts[t] = int(sum(r.bucket_counts[t] for r in reports))
        bucket_bad[t] = {k: float(np.mean([r.bucket_bad[t][k] for r in present])) if present else float('nan')
                         for k in first.bad}
    return MetricsReport(float(np.mean([r.epe for r in reports])), bad,
                         float(np.mean([r.d1 for r in reports])),
                         int(sum(r.count for r in reports)), buckets, counts, bucket_bad)


def reports_frame(reports: Dict[str, MetricsReport]) -> pd.DataFrame:
    """One row per named report (e.g. ``all`` and ``noc``)."""
    rows = []
    for name, report in reports.items():
        row = {'region': name}
        row.update(report.to_row())
        rows.append(row)
    return pd.DataFrame(rows)


def format_table(frame: pd.DataFrame) -> str:
    """Aligned text table; NaN renders as ``n/a``."""
    def fmt(value):
        if isinstance(value, (float, np.floating)):
            return 'n/a' if np.isnan(value) else f'{value:.4f}'
        return str(value)
    return frame.to_string(index=False, formatters={c: fmt for c in frame.columns})
