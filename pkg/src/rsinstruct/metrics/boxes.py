"""Grounding (Pr@t, mIoU, cIoU) and single-category detection AP."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from ..geometry import Box, HorizontalBox, box_intersection_union, box_iou

PR_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


def grounding_metrics(pairs: Sequence[tuple[Optional[HorizontalBox], HorizontalBox]],
                      thresholds: Sequence[float] = PR_THRESHOLDS) -> dict[str, float]:
    """``None`` predictions (unparseable output) count as IoU 0.

    cIoU is the summed intersection over the summed union across all pairs.
    """
    if not pairs:
        raise ValueError("no grounding pairs to score")
    ious = []
    inter_sum = union_sum = 0.0
    unparsed = 0
    for pred, truth in pairs:
        if pred is None:
            unparsed += 1
            ious.append(0.0)
            union_sum += truth.area
            continue
        inter, union = box_intersection_union(pred, truth)
        ious.append(box_iou(pred, truth))
        inter_sum += inter
        union_sum += union
    out = {f"Pr@{t:.1f}": sum(iou >= t for iou in ious) / len(ious) for t in thresholds}
    out["mIoU"] = sum(ious) / len(ious)
    out["cIoU"] = inter_sum / union_sum if union_sum > 0 else 0.0
    out["unparsed"] = float(unparsed)
    return out


@dataclass(frozen=True)
class DetectionPrediction:
    image_id: str
    category: str
    box: Box
    score: Optional[float] = None
    # position within the image's prediction list; keys external scores
    index: int = 0


def detection_ap(predictions: Sequence[DetectionPrediction],
                 ground_truths: Mapping[str, Sequence[Box]],
                 iou_threshold: float = 0.5) -> float:
    """Single-category AP with all-point interpolation.

    Predictions are ranked by score (stable, so ties keep input order). Each
    one claims the still-unmatched ground truth of its image with the highest
    IoU, provided that IoU reaches ``iou_threshold``.
    """
    n_gt = sum(len(v) for v in ground_truths.values())
    if n_gt == 0:
        raise ValueError("average precision is undefined without ground truths")
    for p in predictions:
        if p.score is None or not math.isfinite(p.score):
            raise ValueError(f"prediction {p.image_id}#{p.index} has no finite score")
    ranked = sorted(predictions, key=lambda p: -p.score)
    matched = {img: [False] * len(boxes) for img, boxes in ground_truths.items()}
    tp_flags = []
    for p in ranked:
        gts = ground_truths.get(p.image_id, ())
        best_j, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if matched[p.image_id][j]:
                continue
            iou = box_iou(p.box, g)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[p.image_id][best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    return average_precision(tp_flags, n_gt)


def average_precision(tp_flags: Sequence[bool], n_gt: int) -> float:
    """Area under the precision envelope for a ranked list of hit/miss flags."""
    recalls, precisions = [0.0], [0.0]
    tp = 0
    for k, hit in enumerate(tp_flags, start=1):
        tp += hit
        recalls.append(tp / n_gt)
        precisions.append(tp / k)
    recalls.append(1.0)
    precisions.append(0.0)
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    return sum((recalls[i] - recalls[i - 1]) * precisions[i]
               for i in range(1, len(recalls)) if recalls[i] != recalls[i - 1])


def attach_external_scores(predictions: Sequence[DetectionPrediction],
                           scores: Mapping[tuple[str, int], float],
                           strict: bool = True) -> list[DetectionPrediction]:
    """Set each prediction's score from ``scores[(image_id, index)]``.

    A missing score raises in strict mode and becomes 0 otherwise.
    """
    out = []
    for p in predictions:
        key = (p.image_id, p.index)
        if key in scores:
            s = float(scores[key])
        elif strict:
            raise KeyError(f"no score for prediction {p.image_id}#{p.index}")
        else:
            s = 0.0
        out.append(replace(p, score=s))
    return out


def filter_by_score(predictions: Sequence[DetectionPrediction], threshold: float) -> list[DetectionPrediction]:
    return [p for p in predictions if p.score is not None and p.score >= threshold]
