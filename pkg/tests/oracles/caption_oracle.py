"""Produce frozen caption-metric oracles for the files in ``fixtures/eval``.

BLEU-1..4, ROUGE-L and CIDEr-D come from the reference COCO caption scorer
(pycocoevalcap 1.2), which is not a dependency of this package; point
``PYCOCOEVALCAP_PATH`` at a directory containing it and run once:

    PYCOCOEVALCAP_PATH=/tmp/pccenv python3 tests/oracles/caption_oracle.py

Its Java tokenizer is bypassed by feeding strings that are already
lowercased, punctuation-stripped and space-joined.

METEOR (exact + Porter stem, no synonyms) comes from the exhaustive aligner
below, which shares no code with the package: per stage it keeps every
maximum matching and finally picks the one with the fewest chunks.
"""

from __future__ import annotations

import json
import os
import string
import sys
from pathlib import Path

from nltk.stem.porter import PorterStemmer

EVAL = Path(__file__).resolve().parents[1] / "fixtures" / "eval"
FIXTURES = ("captions20", "captions_short")

_TABLE = str.maketrans({c: " " for c in string.punctuation})
_stem = PorterStemmer().stem


def oracle_tokens(text: str) -> list[str]:
    return text.lower().translate(_TABLE).split()


def _max_matchings(cand_keys, ref_keys, free_c, free_r):
    """All maximum-size matchings between free candidate and reference slots with equal keys."""
    best: list[dict[int, int]] = []
    best_size = -1

    def rec(k: int, used: frozenset, acc: dict) -> None:
        nonlocal best, best_size
        if k == len(free_c):
            if len(acc) > best_size:
                best, best_size = [dict(acc)], len(acc)
            elif len(acc) == best_size:
                best.append(dict(acc))
            return
        # prune: even matching every remaining slot cannot reach the best size
        if len(acc) + (len(free_c) - k) < best_size:
            return
        i = free_c[k]
        for j in free_r:
            if j not in used and ref_keys[j] == cand_keys[i]:
                acc[i] = j
                rec(k + 1, used | {j}, acc)
                del acc[i]
        rec(k + 1, used, acc)

    rec(0, frozenset(), {})
    return best


def _chunks(alignment: dict[int, int]) -> int:
    pairs = sorted(alignment.items())
    return sum(1 for n, (i, j) in enumerate(pairs)
               if n == 0 or i != pairs[n - 1][0] + 1 or j != pairs[n - 1][1] + 1)


def meteor_oracle(cand: list[str], ref: list[str]) -> float:
    if not cand or not ref:
        return 0.0
    options = []
    for exact in _max_matchings(cand, ref, list(range(len(cand))), list(range(len(ref)))):
        free_c = [i for i in range(len(cand)) if i not in exact]
        free_r = [j for j in range(len(ref)) if j not in exact.values()]
        for stem in _max_matchings([_stem(w) for w in cand], [_stem(w) for w in ref], free_c, free_r):
            options.append({**exact, **stem})
    m = max(len(a) for a in options)
    if m == 0:
        return 0.0
    ch = min(_chunks(a) for a in options if len(a) == m)
    p, r = m / len(cand), m / len(ref)
    return 10 * p * r / (r + 9 * p) * (1 - 0.5 * (ch / m) ** 3)


def score_fixture(name: str) -> dict:
    from pycocoevalcap.bleu.bleu import Bleu
    from pycocoevalcap.cider.cider import Cider
    from pycocoevalcap.rouge.rouge import Rouge

    items = json.loads((EVAL / f"{name}.json").read_text(encoding="utf-8"))
    gts = {it["id"]: [" ".join(oracle_tokens(r)) for r in it["references"]] for it in items}
    res = {it["id"]: [" ".join(oracle_tokens(it["candidate"]))] for it in items}
    bleu, _ = Bleu(4).compute_score(gts, res)
    rouge, _ = Rouge().compute_score(gts, res)
    cider, _ = Cider().compute_score(gts, res)
    meteor = [max(meteor_oracle(oracle_tokens(it["candidate"]), oracle_tokens(r)) for r in it["references"])
              for it in items]
    out = {f"BLEU-{n + 1}": float(bleu[n]) for n in range(4)}
    out.update({"ROUGE-L": float(rouge), "CIDEr-D": float(cider),
                "METEOR": sum(meteor) / len(meteor),
                "METEOR_per_item": dict(zip([it["id"] for it in items], meteor)),
                "tokens": {it["id"]: res[it["id"]][0] for it in items}})
    return out


def main() -> None:
    sys.path.insert(0, os.environ["PYCOCOEVALCAP_PATH"])
    for name in FIXTURES:
        out = score_fixture(name)
        (EVAL / f"{name}_oracle.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n",
                                                  encoding="utf-8")
        print(name, json.dumps({k: v for k, v in out.items() if not isinstance(v, dict)}))


if __name__ == "__main__":
    main()
