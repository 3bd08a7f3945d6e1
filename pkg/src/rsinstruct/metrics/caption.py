"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, METEOR (exact+stem), CIDEr-D.

Conventions follow the widely used COCO caption scorers: BLEU uses the
closest reference length for the brevity penalty, ROUGE-L combines the best
precision and best recall over references, CIDEr-D uses document frequencies
over the corpus references with a Gaussian length penalty (sigma 6) and the
x10 scale, so values fall in [0, 10].

METEOR here has no synonym module: unigrams align on exact surface form, then
on Porter stems.
"""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from nltk.stem.porter import PorterStemmer

_PUNCT_RE = re.compile(r"[^\w\s]|_")


@dataclass(frozen=True)
class CaptionItem:
    id: str
    candidate: str
    references: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.references:
            raise ValueError(f"caption item {self.id!r} has no references")


def tokenize_caption(text: str) -> list[str]:
    return _PUNCT_RE.sub(" ", text.lower()).split()


def _check(items: Sequence[CaptionItem]) -> None:
    if not items:
        raise ValueError("caption eval set is empty")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU -------------------------------------------------------------------


def bleu_all(items: Sequence[CaptionItem], max_n: int = 4) -> list[float]:
    """BLEU-1..max_n in one pass over the corpus."""
    _check(items)
    correct = [0] * max_n
    total = [0] * max_n
    cand_len = ref_len = 0
    for item in items:
        cand = tokenize_caption(item.candidate)
        refs = [tokenize_caption(r) for r in item.references]
        cand_len += len(cand)
        # closest reference length, ties broken towards the shorter one
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            c = _ngrams(cand, n)
            max_ref: Counter = Counter()
            for r in refs:
                for g, k in _ngrams(r, n).items():
                    if k > max_ref[g]:
                        max_ref[g] = k
            correct[n - 1] += sum(min(k, max_ref[g]) for g, k in c.items())
            total[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len == 0:
        return [0.0] * max_n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    log_sum = 0.0
    zero = False
    for n in range(max_n):
        if correct[n] == 0 or total[n] == 0:
            zero = True
        else:
            log_sum += math.log(correct[n] / total[n])
        scores.append(0.0 if zero else bp * math.exp(log_sum / (n + 1)))
    return scores


def bleu(items: Sequence[CaptionItem], n: int = 4) -> float:
    if n not in (1, 2, 3, 4):
        raise ValueError(f"BLEU order must be 1..4, got {n}")
    return bleu_all(items, n)[n - 1]


# -- ROUGE-L ----------------------------------------------------------------


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_single(candidate: str, references: Sequence[str], beta: float = 1.2) -> float:
    cand = tokenize_caption(candidate)
    if not cand:
        return 0.0
    precs, recs = [], []
    for ref in references:
        r = tokenize_caption(ref)
        lcs = lcs_length(cand, r)
        precs.append(lcs / len(cand))
        recs.append(lcs / len(r) if r else 0.0)
    p, r = max(precs), max(recs)
    if p == 0.0 or r == 0.0:
        return 0.0
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(items: Sequence[CaptionItem], beta: float = 1.2) -> float:
    _check(items)
    return sum(rouge_l_single(i.candidate, i.references, beta) for i in items) / len(items)


# -- METEOR (exact + stem) --------------------------------------------------

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def _stem(word: str) -> str:
    return _stemmer.stem(word)


def _align(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Two-stage unigram alignment; returns (candidate index, reference index) pairs.

    In each stage candidate tokens are visited left to right. A token takes the
    reference position right after its predecessor's match when that position
    is free and compatible, otherwise the leftmost free compatible position.
    """
    cand_to_ref: dict[int, int] = {}
    used: set[int] = set()
    for key in (lambda w: w, _stem):
        ck = [key(w) for w in cand]
        rk = [key(w) for w in ref]
        for i, k in enumerate(ck):
            if i in cand_to_ref:
                continue
            prev = cand_to_ref.get(i - 1)
            if prev is not None and prev + 1 < len(ref) and prev + 1 not in used and rk[prev + 1] == k:
                j = prev + 1
            else:
                j = next((j for j, r in enumerate(rk) if j not in used and r == k), None)
                if j is None:
                    continue
            cand_to_ref[i] = j
            used.add(j)
    return sorted(cand_to_ref.items())


def _count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    last = None
    for i, j in alignment:
        if last is None or i != last[0] + 1 or j != last[1] + 1:
            chunks += 1
        last = (i, j)
    return chunks


def meteor_single(candidate: str, references: Sequence[str]) -> float:
    cand = tokenize_caption(candidate)
    best = 0.0
    for ref_text in references:
        ref = tokenize_caption(ref_text)
        if not cand or not ref:
            continue
        alignment = _align(cand, ref)
        m = len(alignment)
        if m == 0:
            continue
        p, r = m / len(cand), m / len(ref)
        fmean = 10 * p * r / (r + 9 * p)
        penalty = 0.5 * (_count_chunks(alignment) / m) ** 3
        best = max(best, fmean * (1 - penalty))
    return best


def meteor_lite(items: Sequence[CaptionItem]) -> float:
    _check(items)
    return sum(meteor_single(i.candidate, i.references) for i in items) / len(items)


# -- CIDEr-D ----------------------------------------------------------------


def _ngram_counts(tokens: Sequence[str], max_n: int) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        counts.update(_ngrams(tokens, n))
    return counts


def cider_d_scores(items: Sequence[CaptionItem], max_n: int = 4, sigma: float = 6.0) -> list[float]:
    """Per-image CIDEr-D values (raw, x10 convention)."""
    _check(items)
    cands = [tokenize_caption(i.candidate) for i in items]
    refs = [[tokenize_caption(r) for r in i.references] for i in items]
    cand_counts = [_ngram_counts(c, max_n) for c in cands]
    ref_counts = [[_ngram_counts(r, max_n) for r in rs] for rs in refs]

    df: Counter = Counter()
    for rc in ref_counts:
        df.update(set().union(*(set(c) for c in rc)))
    log_n_images = math.log(float(len(items)))

    def vectorize(counts: Counter):
        vec = [defaultdict(float) for _ in range(max_n)]
        norm = [0.0] * max_n
        for g, tf in counts.items():
            w = tf * (log_n_images - math.log(max(1.0, df[g])))
            vec[len(g) - 1][g] = w
            norm[len(g) - 1] += w * w
        return vec, [math.sqrt(x) for x in norm]

    scores = []
    for cand, cc, rs, rcs in zip(cands, cand_counts, refs, ref_counts):
        vh, nh = vectorize(cc)
        total = [0.0] * max_n
        for ref, rc in zip(rs, rcs):
            vr, nr = vectorize(rc)
            penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma ** 2))
            for n in range(max_n):
                val = sum(min(w, vr[n][g]) * vr[n][g] for g, w in vh[n].items())
                if nh[n] != 0.0 and nr[n] != 0.0:
                    val /= nh[n] * nr[n]
                total[n] += val * penalty
        scores.append(10.0 * sum(total) / max_n / len(rs))
    return scores


def cider_d(items: Sequence[CaptionItem], max_n: int = 4, sigma: float = 6.0) -> float:
    scores = cider_d_scores(items, max_n, sigma)
    return sum(scores) / len(scores)


def caption_scores(items: Sequence[CaptionItem]) -> dict[str, float]:
    b = bleu_all(items, 4)
    return {
        "BLEU-1": b[0],
        "BLEU-2": b[1],
        "BLEU-3": b[2],
        "BLEU-4": b[3],
        "METEOR": meteor_lite(items),
        "ROUGE-L": rouge_l(items),
        "CIDEr-D": cider_d(items),
    }
