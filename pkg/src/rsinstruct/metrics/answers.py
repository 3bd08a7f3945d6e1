from __future__ import annotations

import re
from typing import Sequence

_WS_RE = re.compile(r"\s+")
_CATEGORY_SEP_RE = re.compile(r"[_\-]+")


def normalize_answer(text: str) -> str:
    """Lowercase, trim, drop trailing periods, collapse inner whitespace."""
    t = _WS_RE.sub(" ", str(text).strip().lower())
    return t.rstrip(".").rstrip()


def normalize_category(text: str) -> str:
    # category names often come as "dense_residential" or "dense-residential"
    return _WS_RE.sub(" ", _CATEGORY_SEP_RE.sub(" ", normalize_answer(text))).strip()


def answers_match(prediction: str, truth: str, mode: str = "vqa") -> bool:
    if normalize_answer(prediction) == normalize_answer(truth):
        return True
    if mode == "classification":
        return normalize_category(prediction) == normalize_category(truth)
    return False


def answer_accuracy(pairs: Sequence[tuple[str, str]], mode: str = "vqa") -> float:
    """Exact-match accuracy over (prediction, truth) pairs; no fuzzy matching."""
    if mode not in ("vqa", "classification"):
        raise ValueError(f"unknown accuracy mode {mode!r}")
    if not pairs:
        raise ValueError("no answer pairs to score")
    hits = sum(answers_match(p, t, mode) for p, t in pairs)
    return hits / len(pairs)


def aligned_pairs(predictions: Sequence[str], truths: Sequence[str]) -> list[tuple[str, str]]:
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions vs {len(truths)} ground truths")
    return list(zip(predictions, truths))
