"""Class-agnostic instance segmentation metrics over point masks.

Matching is greedy in score order: each proposal takes the unmatched
ground-truth instance with the highest IoU at or above the threshold (ties
to the lower id). AP is the area under the interpolated precision-recall
curve; the headline AP averages thresholds 0.50:0.05:0.95.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["EvalReport", "ThresholdResult", "mask_iou", "evaluate", "AP_THRESHOLDS"]

AP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean point masks; 0 if both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask length mismatch: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


@dataclass
class ThresholdResult:
    threshold: float
    precisions: np.ndarray
    recalls: np.ndarray
    matches: list[tuple[int, int, float]]  # (proposal index, gt id, iou)
    ap: float
    recall: float


@dataclass
class EvalReport:
    ap: float
    ap50: float
    ap25: float
    rc: float
    rc50: float
    rc25: float
    per_threshold: dict[float, ThresholdResult]

    def table(self) -> list[tuple[str, float]]:
        return [
            ("ap", self.ap),
            ("ap50", self.ap50),
            ("ap25", self.ap25),
            ("rc", self.rc),
            ("rc50", self.rc50),
            ("rc25", self.rc25),
        ]

    def text(self) -> str:
        lines = [f"{name}\t{value:.6f}" for name, value in self.table()]
        return "\n".join(lines)


def _ap_from_curve(precisions: np.ndarray, recalls: np.ndarray) -> float:
    if len(precisions) == 0:
        return 0.0
    interp = np.maximum.accumulate(precisions[::-1])[::-1]
    prev = 0.0
    area = 0.0
    for p, r in zip(interp, recalls):
        area += (r - prev) * p
        prev = r
    return float(area)


def _match_at_threshold(
    masks: list[np.ndarray],
    gt_masks: dict[int, np.ndarray],
    threshold: float,
) -> ThresholdResult:
    gt_ids = sorted(gt_masks)
    available = {g: True for g in gt_ids}
    tp = 0
    precisions = np.zeros(len(masks))
    recalls = np.zeros(len(masks))
    matches: list[tuple[int, int, float]] = []
    for i, mask in enumerate(masks):
        best_gt, best_iou = -1, 0.0
        for g in gt_ids:
            if not available[g]:
                continue
            iou = mask_iou(mask, gt_masks[g])
            if iou >= threshold and iou > best_iou:
                best_gt, best_iou = g, iou
        if best_gt >= 0:
            available[best_gt] = False
            tp += 1
            matches.append((i, best_gt, best_iou))
        precisions[i] = tp / (i + 1)
        recalls[i] = tp / len(gt_ids)
    ap = _ap_from_curve(precisions, recalls)
    recall = tp / len(gt_ids)
    return ThresholdResult(threshold, precisions, recalls, matches, ap, recall)


def evaluate(
    masks: list[np.ndarray],
    scores: list[float],
    gt_instance: np.ndarray,
    thresholds: tuple[float, ...] = AP_THRESHOLDS,
) -> EvalReport:
    """Score proposals (already sorted by descending score) against labeled
    points. gt_instance ids below 0 are background and never evaluated."""
    gt_instance = np.asarray(gt_instance, dtype=np.int64)
    gt_ids = np.unique(gt_instance[gt_instance >= 0])
    if gt_ids.size == 0:
        raise ValueError("nothing to evaluate: no ground-truth instances")
    if len(masks) != len(scores):
        raise ValueError("one score per proposal required")
    scores_arr = np.asarray(scores, dtype=np.float64)
    if len(scores_arr) > 1 and np.any(np.diff(scores_arr) > 0):
        raise ValueError("proposals must be sorted by descending score")
    for mask in masks:
        if np.asarray(mask).shape != gt_instance.shape:
            raise ValueError("proposal masks must cover the full cloud")

    gt_masks = {int(g): gt_instance == g for g in gt_ids}
    wanted = sorted(set(thresholds) | {0.25, 0.50})
    per_threshold = {t: _match_at_threshold(list(masks), gt_masks, t) for t in wanted}
    ap = float(np.mean([per_threshold[t].ap for t in thresholds]))
    rc = float(np.mean([per_threshold[t].recall for t in thresholds]))
    return EvalReport(
        ap=ap,
        ap50=per_threshold[0.50].ap,
        ap25=per_threshold[0.25].ap,
        rc=rc,
        rc50=per_threshold[0.50].recall,
        rc25=per_threshold[0.25].recall,
        per_threshold=per_threshold,
    )
