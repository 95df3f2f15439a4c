"""Segmentation quality metrics on pixel label maps.

Variation of information is reported as its merge/split decomposition so
over- and under-segmentation can be told apart; Symmetric Best Dice scores
instance recovery with background (label 0) excluded from matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Incompatible inputs to a metric."""


@dataclass(frozen=True)
class ContingencyTable:
    """Joint label counts between two label maps over the same pixels."""

    joint: np.ndarray        # (num_a_labels, num_b_labels) counts
    a_labels: np.ndarray     # distinct labels of the first map, sorted
    b_labels: np.ndarray
    total: int

    @property
    def a_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def b_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=0)


def contingency_table(a: np.ndarray, b: np.ndarray) -> ContingencyTable:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise MetricError(f"label map shapes differ: {a.shape} vs {b.shape}")
    a_labels, a_idx = np.unique(a, return_inverse=True)
    b_labels, b_idx = np.unique(b, return_inverse=True)
    joint = np.zeros((len(a_labels), len(b_labels)), dtype=np.int64)
    np.add.at(joint, (a_idx, b_idx), 1)
    return ContingencyTable(joint, a_labels, b_labels, int(a.size))


def _conditional_entropy(joint: np.ndarray, row_marginal: np.ndarray,
                         total: int) -> float:
    """H(column variable | row variable) in nats from joint counts."""
    nz = joint > 0
    p = joint[nz] / total
    cond = np.broadcast_to(row_marginal[:, None], joint.shape)[nz] / total
    return float(np.sum(p * np.log(cond / p)))


def variation_of_information(pred: np.ndarray, gt: np.ndarray,
                             ignore_background: bool = False
                             ) -> tuple[float, float]:
    """(vi_merge, vi_split) in nats.

    vi_merge = H(gt | pred) grows when predicted clusters span several
    ground-truth objects (false merges); vi_split = H(pred | gt) grows when
    ground-truth objects shatter across predictions. With ignore_background
    set, pixels whose ground-truth label is 0 are dropped first.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(
            f"label map shapes differ: {pred.shape} vs {gt.shape}")
    if ignore_background:
        keep = gt.ravel() != 0
        pred = pred.ravel()[keep]
        gt = gt.ravel()[keep]
        if pred.size == 0:
            return 0.0, 0.0
    table = contingency_table(pred, gt)
    # rows are pred clusters, so conditioning on rows gives H(gt | pred)
    vi_merge = _conditional_entropy(table.joint, table.a_marginal,
                                    table.total)
    vi_split = _conditional_entropy(table.joint.T, table.b_marginal,
                                    table.total)
    return vi_merge, vi_split


def _dice_from_counts(overlap: np.ndarray, size_a: int,
                      sizes_b: np.ndarray) -> np.ndarray:
    return 2.0 * overlap / (size_a + sizes_b)


def symmetric_best_dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """min(BD(pred->gt), BD(gt->pred)); background label 0 is not an instance.

    BD(A->B) averages, over instances of A, the best Dice overlap with any
    instance of B. Scores 0 when either map has no foreground instances.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(
            f"label map shapes differ: {pred.shape} vs {gt.shape}")
    table = contingency_table(pred, gt)
    a_fg = np.flatnonzero(table.a_labels != 0)
    b_fg = np.flatnonzero(table.b_labels != 0)
    if len(a_fg) == 0 or len(b_fg) == 0:
        return 0.0
    joint = table.joint[np.ix_(a_fg, b_fg)].astype(np.float64)
    sizes_a = table.a_marginal[a_fg].astype(np.float64)
    sizes_b = table.b_marginal[b_fg].astype(np.float64)
    dice = 2.0 * joint / (sizes_a[:, None] + sizes_b[None, :])
    bd_pred = float(dice.max(axis=1).mean())
    bd_gt = float(dice.max(axis=0).mean())
    return min(bd_pred, bd_gt)


def instance_recovery(pred: np.ndarray, gt: np.ndarray,
                      iou_threshold: float = 0.5) -> float:
    """Fraction of ground-truth instances matched by some prediction at IoU
    >= threshold; label 0 is background on both sides."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(
            f"label map shapes differ: {pred.shape} vs {gt.shape}")
    table = contingency_table(pred, gt)
    a_fg = np.flatnonzero(table.a_labels != 0)
    b_fg = np.flatnonzero(table.b_labels != 0)
    if len(b_fg) == 0:
        raise MetricError("ground truth has no foreground instances")
    if len(a_fg) == 0:
        return 0.0
    joint = table.joint[np.ix_(a_fg, b_fg)].astype(np.float64)
    sizes_a = table.a_marginal[a_fg].astype(np.float64)
    sizes_b = table.b_marginal[b_fg].astype(np.float64)
    union = sizes_a[:, None] + sizes_b[None, :] - joint
    iou = joint / union
    return float((iou.max(axis=0) >= iou_threshold).mean())
