"""Evaluation metrics: classification accuracy, per-class IoU, and scene-flow
end-point-error statistics.

Conventions: the EPE accuracy threshold is a logical OR of an absolute bound
and a bound relative to the ground-truth flow magnitude; the EPE standard
deviation is the population (not sample) standard deviation; classes whose
prediction/ground-truth union is empty receive a configurable IoU (0 by
default).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import InputError, as_float_array


@dataclass(frozen=True)
class EpeReport:
    """End-point-error summary: mean, std, accuracy fraction, outlier fraction."""

    mean: float
    std: float
    accuracy: float
    outlier: float

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "accuracy": self.accuracy,
            "outlier": self.outlier,
        }


@dataclass(frozen=True)
class IouReport:
    """Per-class IoU, their mean, and overall point accuracy."""

    per_class: np.ndarray
    mean_iou: float
    mean_accuracy: float

    def as_dict(self) -> dict:
        return {
            "per_class_iou": [float(v) for v in self.per_class],
            "mean_iou": self.mean_iou,
            "mean_accuracy": self.mean_accuracy,
        }


def epe_stats(pred_flows, gt_flows, acc_abs: float = 0.1, acc_rel: float = 0.1,
              outlier_threshold: float = 1.0) -> EpeReport:
    """EPE statistics between predicted and ground-truth flow vectors.

    EPE_i is the L2 distance between the i-th prediction and ground truth.
    A prediction is accurate when EPE_i < acc_abs or EPE_i < acc_rel times
    the ground-truth magnitude, and an outlier when EPE_i > outlier_threshold.
    """
    pred = as_float_array(pred_flows, "pred_flows", shape=(None, 3))
    gt = as_float_array(gt_flows, "gt_flows", shape=(None, 3))
    if pred.shape[0] != gt.shape[0]:
        raise InputError(
            f"flow count mismatch: {pred.shape[0]} predictions vs {gt.shape[0]} ground truth"
        )
    if pred.shape[0] == 0:
        raise InputError("epe_stats requires at least one flow vector")
    epe = np.linalg.norm(pred - gt, axis=1)
    gt_norm = np.linalg.norm(gt, axis=1)
    accurate = (epe < acc_abs) | (epe < acc_rel * gt_norm)
    outlier = epe > outlier_threshold
    return EpeReport(
        mean=float(epe.mean()),
        std=float(epe.std()),
        accuracy=float(accurate.mean()),
        outlier=float(outlier.mean()),
    )


def _check_labels(labels, name: str, num_classes: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D label array")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == arr.astype(np.int64)):
            raise InputError(f"{name} must contain integer labels")
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise InputError(f"{name} labels must lie in 0..{num_classes - 1}")
    return arr.astype(np.int64)


def iou_report(pred_labels, gt_labels, num_classes: int,
               empty_union_iou: float = 0.0) -> IouReport:
    """Per-class intersection-over-union, mean IoU, and overall accuracy.

    A class absent from both prediction and ground truth has an empty union;
    such classes contribute ``empty_union_iou`` (0 by default, matching
    benchmark tables that report 0.00 for never-occurring classes).
    """
    if num_classes < 1:
        raise InputError("num_classes must be >= 1")
    pred = _check_labels(pred_labels, "pred_labels", num_classes)
    gt = _check_labels(gt_labels, "gt_labels", num_classes)
    if pred.shape != gt.shape:
        raise InputError(f"label count mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise InputError("iou_report requires at least one label")
    per_class = np.empty(num_classes)
    for c in range(num_classes):
        tp = int(np.count_nonzero((pred == c) & (gt == c)))
        fp = int(np.count_nonzero((pred == c) & (gt != c)))
        fn = int(np.count_nonzero((pred != c) & (gt == c)))
        union = tp + fp + fn
        per_class[c] = empty_union_iou if union == 0 else tp / union
    return IouReport(
        per_class=per_class,
        mean_iou=float(per_class.mean()),
        mean_accuracy=float((pred == gt).mean()),
    )


def accuracy(pred_classes, gt_classes) -> float:
    """Fraction of predictions equal to ground truth."""
    pred = np.asarray(pred_classes)
    gt = np.asarray(gt_classes)
    if pred.shape != gt.shape:
        raise InputError(f"label count mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise InputError("accuracy requires at least one label")
    return float((pred == gt).mean())
