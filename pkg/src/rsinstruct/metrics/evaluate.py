"""Score prediction files against compiled instruction records.

Prediction files hold one JSON object per line::

    {"id": "<record id>", "turn": 0, "prediction": "<model output text>"}

``turn`` indexes the conversation round (default 0). Caption records take a
single prediction scored against every assistant caption of the record.

Score files hold ``{"id": ..., "index": ..., "score": ...}`` objects (or
``[id, index, score]`` arrays), where ``index`` is the position of a
detection inside the parsed prediction text.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from ..compiler import (
    BoxParseError,
    InstructionRecord,
    Task,
    parse_box_text,
    parse_detection_text,
)
from ..geometry import Box, GeometryError, HorizontalBox, box_from_normalized
from .answers import answer_accuracy
from .boxes import (
    DetectionPrediction,
    attach_external_scores,
    detection_ap,
    filter_by_score,
    grounding_metrics,
)
from .caption import CaptionItem, caption_scores


class EvalMismatch(ValueError):
    """Prediction and ground-truth files disagree on ids."""

    def __init__(self, key, message: str):
        super().__init__(message)
        self.key = key


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    counts: dict[str, int] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for k, v in self.metrics.items():
            if not math.isfinite(v):
                raise ValueError(f"metric {k} is not finite: {v}")

    def to_tsv(self) -> str:
        lines = ["key\tvalue", f"task\t{self.task}"]
        lines += [f"{k}\t{v}" for k, v in self.meta.items()]
        lines += [f"{k}\t{v:.6f}" for k, v in self.metrics.items()]
        lines += [f"n_{k}\t{v}" for k, v in self.counts.items()]
        return "\n".join(lines) + "\n"

    @staticmethod
    def read_tsv(text: str) -> dict[str, str]:
        rows = [ln.split("\t", 1) for ln in text.splitlines()[1:] if ln.strip()]
        return {k: v for k, v in rows}


def load_predictions(path: Union[str, Path]) -> "OrderedDict[tuple[str, int], str]":
    preds: OrderedDict[tuple[str, int], str] = OrderedDict()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            key = (str(obj["id"]), int(obj.get("turn", 0)))
            if key in preds:
                raise EvalMismatch(key, f"duplicate prediction for {key[0]} turn {key[1]} (line {lineno})")
            preds[key] = str(obj.get("prediction", ""))
    return preds


def load_scores(path: Union[str, Path]) -> dict[tuple[str, int], float]:
    scores: dict[tuple[str, int], float] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if isinstance(obj, list):
                sid, idx, score = obj
            else:
                sid, idx, score = obj["id"], obj["index"], obj["score"]
            scores[(str(sid), int(idx))] = float(score)
    return scores


def _select(records: Iterable[InstructionRecord], tasks: Sequence[Task]) -> list[InstructionRecord]:
    return [r for r in records if r.task in tasks]


def _check_keys(expected: Sequence[tuple[str, int]], preds, all_ids: set[str]) -> None:
    exp = set(expected)
    exp_ids = {k[0] for k in exp}
    for key in preds:
        if key[0] not in all_ids:
            raise EvalMismatch(key, f"prediction id {key[0]!r} not found in ground truth")
        if key[0] in exp_ids and key not in exp:
            raise EvalMismatch(key, f"prediction {key[0]!r} turn {key[1]} has no ground truth round")
    for key in expected:
        if key not in preds:
            raise EvalMismatch(key, f"missing prediction for {key[0]!r} turn {key[1]}")


def evaluate_captions(records: Sequence[InstructionRecord], preds, region: bool = False,
                      all_ids: Optional[set[str]] = None) -> EvalReport:
    """Image captions pool every round as references; region captions score each round alone."""
    all_ids = all_ids if all_ids is not None else {r.id for r in records}
    if region:
        gt = _select(records, [Task.REGION_CAPTION])
        refs = {(r.id, k): (a,) for r in gt for k, (_, a) in enumerate(r.rounds)}
    else:
        gt = _select(records, [Task.CAPTION])
        refs = {(r.id, 0): tuple(a for _, a in r.rounds) for r in gt}
    _check_keys(list(refs), preds, all_ids)
    items = [CaptionItem(f"{k[0]}#{k[1]}", preds[k], v) for k, v in refs.items()]
    if not items:
        raise ValueError("no caption records in ground truth")
    m = caption_scores(items)
    m["CIDEr-D_x100"] = 100.0 * m["CIDEr-D"]
    return EvalReport("caption", m, {"images": len(items)})


def evaluate_answers(records: Sequence[InstructionRecord], preds, mode: str,
                     all_ids: Optional[set[str]] = None) -> EvalReport:
    task = Task.VQA if mode == "vqa" else Task.CLASSIFICATION
    gt = _select(records, [task])
    all_ids = all_ids if all_ids is not None else {r.id for r in records}
    expected, truths = [], []
    for r in gt:
        for k, (_, a) in enumerate(r.rounds):
            expected.append((r.id, k))
            truths.append(a)
    _check_keys(expected, preds, all_ids)
    if not expected:
        raise ValueError(f"no {task.value} records in ground truth")
    pairs = [(preds[k], t) for k, t in zip(expected, truths)]
    name = "OA" if mode == "vqa" else "Top-1"
    return EvalReport(mode, {name: answer_accuracy(pairs, mode), "accuracy": answer_accuracy(pairs, mode)},
                      {"images": len(gt), "questions": len(pairs)})


def _parse_pred_box(text: str) -> Optional[Box]:
    try:
        return box_from_normalized(parse_box_text(text))
    except (BoxParseError, GeometryError):
        return None


def evaluate_grounding(records: Sequence[InstructionRecord], preds,
                       all_ids: Optional[set[str]] = None) -> EvalReport:
    gt = _select(records, [Task.GROUNDING_LOCATE])
    all_ids = all_ids if all_ids is not None else {r.id for r in records}
    expected, truths = [], []
    for r in gt:
        for k, (_, a) in enumerate(r.rounds):
            expected.append((r.id, k))
            truths.append(box_from_normalized(parse_box_text(a)))
    _check_keys(expected, preds, all_ids)
    if not expected:
        raise ValueError("no grounding records in ground truth")
    pairs = []
    for key, truth in zip(expected, truths):
        pred = _parse_pred_box(preds[key])
        if pred is not None and not isinstance(pred, HorizontalBox):
            pred = None
        pairs.append((pred, truth))
    m = grounding_metrics(pairs)
    unparsed = int(m.pop("unparsed"))
    return EvalReport("grounding", m, {"pairs": len(pairs), "unparsed": unparsed})


def detection_predictions(record_id: str, text: str) -> tuple[list[DetectionPrediction], int]:
    items, bad = parse_detection_text(text)
    out = []
    for idx, (cat, nb) in enumerate(items):
        try:
            box = box_from_normalized(nb)
        except GeometryError:
            bad += 1
            continue
        out.append(DetectionPrediction(record_id, cat, box, None, idx))
    return out, bad


def evaluate_detection(records: Sequence[InstructionRecord], preds,
                       iou_thresholds: Sequence[float] = (0.4, 0.5),
                       scores: Optional[dict[tuple[str, int], float]] = None,
                       score_threshold: Optional[float] = None,
                       strict: bool = True,
                       all_ids: Optional[set[str]] = None) -> EvalReport:
    """Per-category AP averaged over ground-truth categories, at each threshold.

    Without ``scores`` every prediction scores 1.0, so ranking falls back to
    record order and position within the prediction text.
    """
    gt = _select(records, [Task.DETECTION_HBB, Task.DETECTION_OBB])
    all_ids = all_ids if all_ids is not None else {r.id for r in records}
    expected = [(r.id, 0) for r in gt]
    _check_keys(expected, preds, all_ids)
    if not gt:
        raise ValueError("no detection records in ground truth")
    gts: dict[str, dict[str, list[Box]]] = {}
    for r in gt:
        items, bad = parse_detection_text(r.rounds[0][1])
        if bad:
            raise ValueError(f"ground truth record {r.id} has malformed boxes")
        for cat, nb in items:
            gts.setdefault(cat, {}).setdefault(r.id, []).append(box_from_normalized(nb))
    predictions: list[DetectionPrediction] = []
    unparsed = 0
    for r in gt:
        p, bad = detection_predictions(r.id, preds[(r.id, 0)])
        predictions.extend(p)
        unparsed += bad
    if scores is None:
        # generative output has no confidence: a uniform score ranks by output order
        predictions = [replace(p, score=1.0) for p in predictions]
    else:
        predictions = attach_external_scores(predictions, scores, strict=strict)
    n_before = len(predictions)
    if score_threshold is not None:
        predictions = filter_by_score(predictions, score_threshold)
    metrics: dict[str, float] = {}
    for thr in iou_thresholds:
        aps = []
        for cat, per_image in sorted(gts.items()):
            cat_preds = [p for p in predictions if p.category == cat]
            aps.append(detection_ap(cat_preds, per_image, thr))
        metrics[f"AP@{round(thr * 100)}"] = sum(aps) / len(aps)
    counts = {
        "images": len(gt),
        "instances": sum(len(v) for per in gts.values() for v in per.values()),
        "predictions": n_before,
        "kept_predictions": len(predictions),
        "unparsed": unparsed,
    }
    return EvalReport("detection", metrics, counts)
