"""Segmentation, classification and severity-error metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PixelConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "PixelConfusion") -> "PixelConfusion":
        return PixelConfusion(self.tp + other.tp, self.fp + other.fp,
                              self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class SegMetrics:
    f1: float
    precision: float
    recall: float
    iou: float


@dataclass(frozen=True)
class ClsMetrics:
    balanced_accuracy: float
    tpr: float
    tnr: float


def confusion(pred, gt) -> PixelConfusion:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return PixelConfusion(tp, fp, fn, pred.size - tp - fp - fn)


def metrics_from_confusion(c: PixelConfusion) -> SegMetrics:
    # both masks empty counts as perfect agreement
    if c.tp + c.fp + c.fn == 0:
        return SegMetrics(1.0, 1.0, 1.0, 1.0)
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    iou = c.tp / (c.tp + c.fp + c.fn)
    return SegMetrics(f1, precision, recall, iou)


def seg_metrics(pred, gt) -> SegMetrics:
    return metrics_from_confusion(confusion(pred, gt))


def accumulate(pairs) -> SegMetrics:
    """Micro-averaged metrics over an iterable of ``(pred, gt)`` pairs."""
    total = PixelConfusion()
    for pred, gt in pairs:
        total = total + confusion(pred, gt)
    return metrics_from_confusion(total)


def cls_metrics(predictions, labels) -> ClsMetrics:
    """TPR, TNR and their mean for binary labels.

    A rate whose class is absent from ``labels`` is NaN, as is the balanced
    accuracy built from it.
    """
    p = np.asarray(predictions).astype(int)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    pos, neg = y == 1, y == 0
    tpr = float(np.mean(p[pos] == 1)) if pos.any() else math.nan
    tnr = float(np.mean(p[neg] == 0)) if neg.any() else math.nan
    return ClsMetrics((tpr + tnr) / 2, tpr, tnr)


def balanced_accuracy(tpr: float, tnr: float) -> float:
    return (tpr + tnr) / 2


def mae(est, true) -> float:
    est, true = np.asarray(est, dtype=float), np.asarray(true, dtype=float)
    if est.size == 0 or est.shape != true.shape:
        raise ValueError("mae needs two non-empty sequences of equal length")
    return float(np.mean(np.abs(est - true)))


def mape(est, true) -> float:
    """Mean absolute percentage error; pairs with a zero truth are skipped."""
    est, true = np.asarray(est, dtype=float), np.asarray(true, dtype=float)
    if est.size == 0 or est.shape != true.shape:
        raise ValueError("mape needs two non-empty sequences of equal length")
    keep = true != 0
    if not keep.all():
        warnings.warn(f"mape: {int((~keep).sum())} zero-truth pair(s) excluded", stacklevel=2)
    if not keep.any():
        return math.nan
    return float(np.mean(np.abs(est[keep] - true[keep]) / np.abs(true[keep])) * 100)


def mass_inside(values, mask) -> float:
    """Share of the positive attribution mass that falls on ``mask``; 0 when
    the map has no positive part."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0, None)
    m = np.asarray(mask, dtype=bool)
    if v.shape != m.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {m.shape}")
    total = v.sum()
    return float(v[m].sum() / total) if total > 0 else 0.0
