from __future__ import annotations

import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"
CORPUS_MANIFEST = FIXTURES / "corpus" / "manifest.yaml"
SMALL_MANIFEST = FIXTURES / "small" / "manifest.yaml"
BAD_MANIFEST = FIXTURES / "corpus" / "bad" / "manifest.yaml"
EVAL = FIXTURES / "eval"


def load_json(name: str):
    return json.loads((EVAL / name).read_text(encoding="utf-8"))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


# which rounds each evaluator scores, keyed by the CLI subcommand suffix
PERFECT_TASKS = {
    "vqa": (("vqa",), None),
    "cls": (("classification",), None),
    "ground": (("grounding_locate",), None),
    "det": (("detection_hbb", "detection_obb"), 1),
    "caption": (("caption",), 1),
}


def perfect_predictions(records, command: str) -> str:
    """Prediction lines that copy the ground-truth answer of every scored round.

    Captions predict their first reference; detection answers its first round only.
    """
    tasks, limit = PERFECT_TASKS[command]
    lines = []
    for r in records:
        if r.task.value not in tasks:
            continue
        for k, (_, answer) in enumerate(r.rounds[:limit]):
            lines.append(json.dumps({"id": r.id, "turn": k, "prediction": answer}))
    return "\n".join(lines) + "\n"
