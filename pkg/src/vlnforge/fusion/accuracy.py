"""Box IoU and label accuracy of predicted objects against ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..synth.truth import SceneTruth


def box_iou(amin: np.ndarray, amax: np.ndarray, bmin: np.ndarray, bmax: np.ndarray) -> np.ndarray:
    """Pairwise volume IoU of axis-aligned boxes; shapes (P, 3) x (G, 3) -> (P, G)."""
    amin, amax = np.atleast_2d(amin), np.atleast_2d(amax)
    bmin, bmax = np.atleast_2d(bmin), np.atleast_2d(bmax)
    lo = np.maximum(amin[:, None], bmin[None])
    hi = np.minimum(amax[:, None], bmax[None])
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    va = np.prod(amax - amin, axis=1)
    vb = np.prod(bmax - bmin, axis=1)
    union = va[:, None] + vb[None] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


@dataclass(frozen=True)
class AccuracyResult:
    accuracy: float
    n_correct: int
    n_matched: int
    n_predicted: int
    defined: bool


def match_to_truth(objects, truth: SceneTruth, min_iou: float = 0.1):
    """Index of the max-IoU ground-truth object per prediction (-1 below ``min_iou``) and that IoU."""
    if not objects or not truth.objects:
        return np.full(len(objects), -1), np.zeros(len(objects))
    pmin = np.array([o.min for o in objects])
    pmax = np.array([o.max for o in objects])
    gmin = np.array([g.min for g in truth.objects])
    gmax = np.array([g.max for g in truth.objects])
    iou = box_iou(pmin, pmax, gmin, gmax)
    best = np.argmax(iou, axis=1)
    val = iou[np.arange(len(objects)), best]
    return np.where(val >= min_iou, best, -1), val


def label_accuracy(objects, truth: SceneTruth, min_iou: float = 0.1) -> AccuracyResult:
    """Fraction of IoU-matched predictions whose class equals the matched ground truth.

    With no predictions (or none matched) the accuracy is reported as 0 and
    ``defined`` is False.
    """
    objects = list(objects)
    best, _ = match_to_truth(objects, truth, min_iou)
    matched = best >= 0
    n_matched = int(matched.sum())
    if n_matched == 0:
        return AccuracyResult(0.0, 0, 0, len(objects), False)
    correct = sum(1 for o, b in zip(objects, best) if b >= 0 and o.class_index == truth.objects[b].class_index)
    return AccuracyResult(correct / n_matched, correct, n_matched, len(objects), True)
