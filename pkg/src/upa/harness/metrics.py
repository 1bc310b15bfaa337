"""Classification and segmentation metrics from confusion counts."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def confusion_matrix(pred, truth, n_classes):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ConfigError(f"prediction/truth shapes differ: {pred.shape} vs {truth.shape}")
    if pred.size and (pred.min() < 0 or pred.max() >= n_classes
                      or truth.min() < 0 or truth.max() >= n_classes):
        raise ConfigError(f"labels outside [0, {n_classes})")
    counts = np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


def overall_accuracy(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    return float((pred == truth).mean())


def iou_per_class(cm):
    """TP / (TP + FP + FN) per class; NaN when the class is absent from
    both prediction and truth."""
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def class_mean_iou(cm):
    """Mean IoU over classes present in prediction or truth."""
    iou = iou_per_class(cm)
    present = ~np.isnan(iou)
    return float(iou[present].mean()) if present.any() else float("nan")


def instance_mean_iou(pred_per_cloud, truth_per_cloud, n_classes):
    """Average of per-cloud mean IoUs.

    Within one cloud, classes absent from both its prediction and its
    truth are excluded from that cloud's mean.
    """
    scores = []
    for pred, truth in zip(pred_per_cloud, truth_per_cloud):
        cm = confusion_matrix(pred, truth, n_classes)
        scores.append(class_mean_iou(cm))
    return float(np.mean(scores))
