"""Region metrics: overall/mean IoU, precision@K and mAP over 0.50:0.05:0.95."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PRECISION_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
MAP_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))


def _areas(pred, gt):
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt))


def iou(pred, gt) -> float:
    """Intersection over union; two empty masks agree perfectly (IoU 1)."""
    inter, union = _areas(pred, gt)
    return 1.0 if union == 0 else inter / union


@dataclass
class MetricReport:
    overall_iou: float
    mean_iou: float
    precision_at: dict = field(default_factory=dict)
    map: float = 0.0
    n_samples: int = 0

    def rows(self):
        yield "overall_iou", self.overall_iou
        yield "mean_iou", self.mean_iou
        for k, v in self.precision_at.items():
            yield f"P@{k:.1f}", v
        yield "mAP@0.50:0.95", self.map
        yield "n_samples", self.n_samples

    def to_text(self) -> str:
        rows = list(self.rows())
        width = max(len(k) for k, _ in rows)
        return "\n".join(
            f"{k:<{width}}  {v:d}" if isinstance(v, int) else f"{k:<{width}}  {v:.4f}" for k, v in rows
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.rows():
            w.writerow([k, v if isinstance(v, int) else repr(float(v))])
        return buf.getvalue()


def evaluate(preds: Sequence, gts: Sequence) -> MetricReport:
    """Each (pred, gt) pair is one test sample, e.g. one annotated frame."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ValueError("cannot evaluate an empty sample set")
    areas = np.array([_areas(p, g) for p, g in zip(preds, gts)], dtype=np.int64)
    inter, union = areas[:, 0], areas[:, 1]
    per_sample = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    total_union = union.sum()
    overall = 1.0 if total_union == 0 else inter.sum() / total_union
    precision = {k: float(np.mean(per_sample > k)) for k in PRECISION_THRESHOLDS}
    m_ap = float(np.mean([np.mean(per_sample > k) for k in MAP_THRESHOLDS]))
    return MetricReport(float(overall), float(per_sample.mean()), precision, m_ap, len(preds))
