"""Segmentation scores and the noise-overfit rate."""
from dataclasses import dataclass, field
from typing import List

import numpy as np


def _ids(m):
    return np.asarray(getattr(m, "ids", m))


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _counts(pred, gt, cls):
    p, g = pred == cls, gt == cls
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn


def dice(pred, gt, cls: int) -> float:
    """2TP / (2TP + FP + FN); 1.0 when the class is absent from both masks."""
    pred, gt = _ids(pred), _ids(gt)
    _check(pred, gt)
    tp, fp, fn = _counts(pred, gt, cls)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def miou(pred, gt, classes: int) -> float:
    """Mean IoU over classes present in at least one of the masks."""
    pred, gt = _ids(pred), _ids(gt)
    _check(pred, gt)
    scores = []
    for c in range(classes):
        tp, fp, fn = _counts(pred, gt, c)
        if tp + fp + fn:
            scores.append(tp / (tp + fp + fn))
    return float(np.mean(scores)) if scores else 1.0


def noise_overfit_rate(pred, clean, noisy) -> float:
    """Among corrupted pixels (noisy != clean), the fraction predicted as the noisy label."""
    pred, clean, noisy = _ids(pred), _ids(clean), _ids(noisy)
    _check(pred, clean)
    _check(pred, noisy)
    corrupted = noisy != clean
    n = int(np.count_nonzero(corrupted))
    if n == 0:
        return 0.0
    return int(np.count_nonzero(corrupted & (pred == noisy))) / n


@dataclass
class MetricsRecord:
    dice: List[float] = field(default_factory=list)
    mean_dice: float = 0.0
    miou: float = 0.0
    noise_rate: float = 0.0
    loss: float = 0.0


def summarize(preds, gts, classes, noisy=None, loss=0.0) -> MetricsRecord:
    """Dataset-level record: per-class Dice over all pixels pooled, mIoU pooled,
    noise rate pooled over corrupted pixels (when ``noisy`` is given)."""
    if len(preds) == 0:
        raise ValueError("cannot summarize an empty set of predictions")
    p = np.concatenate([_ids(x).ravel() for x in preds])
    g = np.concatenate([_ids(x).ravel() for x in gts])
    per_class = [dice(p, g, c) for c in range(classes)]
    rec = MetricsRecord(
        dice=per_class,
        mean_dice=float(np.mean(per_class[1:])),
        miou=miou(p, g, classes),
        loss=float(loss),
    )
    if noisy is not None:
        nz = np.concatenate([_ids(x).ravel() for x in noisy])
        rec.noise_rate = noise_overfit_rate(p, g, nz)
    return rec
