"""Convert source samples into multi-turn instruction records.

One record binds one image to a human/assistant conversation. Box answers are
written as ``[v1,v2,...]`` with four-decimal normalized coordinates; detection
answers list ``category [box]`` items joined by ``"; "`` in source order.
"""

from __future__ import annotations

import json
import random
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import yaml

from .geometry import (
    Box,
    GeometryError,
    NormalizedBox,
    OrientedBox,
    hbb_from_obb,
    normalize_box,
)
from .ingest import (
    Captions,
    Classification,
    Detection,
    Diagnostic,
    Grounding,
    Modality,
    SourceSample,
    VqaPairs,
    has_errors,
    parse_caption_file,
    parse_classification_manifest,
    parse_detection_file,
    parse_dota_directory,
    parse_grounding_file,
    parse_vqa_file,
    validate_corpus,
)

CLASSIFICATION_PROMPT = (
    "What is the category of this RS image? Answering the question using a single word or phrase. "
    "Reference categories include "
)
CAPTION_PROMPT = "Please provide a one-sentence caption for the provided RS image in detail."
VQA_SUFFIX = "Answering the question using a single word or phrase."
DETECTION_PROMPT = "Detect all objects shown in the RS image and describe using {kind} bounding boxes"
# Per-category wording is our own extension of the detection prompt.
REFERRING_PROMPT = "Detect all the {category} shown in the RS image and describe using {kind} bounding boxes"
LOCATE_SUFFIX = "Please output the bounding box coordinates of the target described above."
DESCRIBE_PROMPT = "Please provide a short description of the target region {box}."

_BOX_KIND_WORD = {"hbb": "horizontal", "obb": "oriented"}


class CompileError(ValueError):
    pass


class BoxParseError(ValueError):
    pass


class Task(str, Enum):
    CLASSIFICATION = "classification"
    CAPTION = "caption"
    VQA = "vqa"
    DETECTION_HBB = "detection_hbb"
    DETECTION_OBB = "detection_obb"
    GROUNDING_LOCATE = "grounding_locate"
    REGION_CAPTION = "region_caption"


TASK_ORDER = {t: i for i, t in enumerate(Task)}


@dataclass(frozen=True)
class Turn:
    role: str  # "human" | "assistant"
    text: str


@dataclass(frozen=True)
class InstructionRecord:
    id: str
    image_path: str
    modality: Modality
    task: Task
    turns: tuple[Turn, ...]
    source: str = ""

    def __post_init__(self) -> None:
        if not self.turns or len(self.turns) % 2:
            raise CompileError(f"record {self.id}: turns must come in human/assistant pairs")
        for i, t in enumerate(self.turns):
            expected = "human" if i % 2 == 0 else "assistant"
            if t.role != expected:
                raise CompileError(f"record {self.id}: turn {i} should be {expected}, got {t.role}")

    @property
    def rounds(self) -> list[tuple[str, str]]:
        return [(self.turns[i].text, self.turns[i + 1].text) for i in range(0, len(self.turns), 2)]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "image": self.image_path,
            "modality": self.modality.value,
            "task": self.task.value,
            "source": self.source,
            "conversations": [{"from": t.role, "value": t.text} for t in self.turns],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InstructionRecord":
        turns = tuple(Turn(c["from"], c["value"]) for c in obj["conversations"])
        return cls(str(obj["id"]), obj["image"], Modality.parse(obj["modality"]),
                   Task(obj["task"]), turns, obj.get("source", ""))


def _from_rounds(sample: SourceSample, task: Task, rounds: Sequence[tuple[str, str]],
                 source: str = "") -> InstructionRecord:
    turns: list[Turn] = []
    for human, assistant in rounds:
        turns.append(Turn("human", human))
        turns.append(Turn("assistant", assistant))
    rid = f"{source}:{sample.id}:{task.value}" if source else f"{sample.id}:{task.value}"
    return InstructionRecord(rid, sample.image_path, sample.modality, task, tuple(turns), source)


# -- box text ---------------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_BOX_RE = re.compile(r"^\s*\[\s*(.*?)\s*\]\s*$", re.S)
_NUM_RE = re.compile(rf"^\s*{_NUM}\s*$")


def serialize_box_text(box: NormalizedBox) -> str:
    return "[" + ",".join(f"{v:.4f}" for v in box.values) + "]"


def parse_box_text(text: str) -> NormalizedBox:
    """Inverse of :func:`serialize_box_text`; accepts 4 or 8 values in [0, 1]."""
    m = _BOX_RE.match(text)
    if not m:
        raise BoxParseError(f"not a bracketed box: {text!r}")
    parts = m.group(1).split(",")
    if len(parts) not in (4, 8):
        raise BoxParseError(f"box needs 4 or 8 values, got {len(parts)}: {text!r}")
    values = []
    for p in parts:
        if not _NUM_RE.match(p):
            raise BoxParseError(f"malformed number {p.strip()!r} in {text!r}")
        values.append(float(p))
    try:
        return NormalizedBox(tuple(values))
    except GeometryError as exc:
        raise BoxParseError(str(exc)) from None


_DET_ITEM_RE = re.compile(r"\s*([^\[\];]*?)\s*(\[[^\]]*\])")


def format_detections(items: Iterable[tuple[str, NormalizedBox]]) -> str:
    return "; ".join(f"{cat} {serialize_box_text(b)}" for cat, b in items)


def parse_detection_text(text: str) -> tuple[list[tuple[str, NormalizedBox]], int]:
    """Parse ``category [box]; ...``; returns parsed items and the count of bad items."""
    items: list[tuple[str, NormalizedBox]] = []
    bad = 0
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        m = _DET_ITEM_RE.fullmatch(chunk.strip())
        if not m:
            bad += 1
            continue
        try:
            items.append((m.group(1).strip(), parse_box_text(m.group(2))))
        except BoxParseError:
            bad += 1
    return items, bad


# -- per-task conversion ----------------------------------------------------


def compile_classification(sample: SourceSample, source: str = "") -> InstructionRecord:
    p = sample.payload
    if not isinstance(p, Classification):
        raise CompileError(f"{sample.id}: expected a classification payload")
    if not p.reference_categories or p.category not in p.reference_categories:
        raise CompileError(f"{sample.id}: category {p.category!r} missing from reference list")
    human = CLASSIFICATION_PROMPT + ",".join(p.reference_categories)
    return _from_rounds(sample, Task.CLASSIFICATION, [(human, p.category)], source)


def compile_caption(sample: SourceSample, source: str = "") -> InstructionRecord:
    p = sample.payload
    if not isinstance(p, Captions):
        raise CompileError(f"{sample.id}: expected a caption payload")
    unique = list(OrderedDict.fromkeys(t.strip() for t in p.texts if t.strip()))
    if not unique:
        raise CompileError(f"{sample.id}: no non-empty captions")
    return _from_rounds(sample, Task.CAPTION, [(CAPTION_PROMPT, c) for c in unique], source)


def with_vqa_suffix(question: str) -> str:
    q = question.strip()
    if q.endswith(VQA_SUFFIX):
        return q
    return f"{q} {VQA_SUFFIX}"


def compile_vqa(sample: SourceSample, source: str = "") -> InstructionRecord:
    p = sample.payload
    if not isinstance(p, VqaPairs):
        raise CompileError(f"{sample.id}: expected a VQA payload")
    rounds = []
    for q, a in p.pairs:
        if not q.strip():
            raise CompileError(f"{sample.id}: empty question")
        rounds.append((with_vqa_suffix(q), a))
    if not rounds:
        raise CompileError(f"{sample.id}: no QA pairs")
    return _from_rounds(sample, Task.VQA, rounds, source)


def _target_box(box: Box, box_format: str, sample_id: str) -> Box:
    if box_format == "hbb":
        return hbb_from_obb(box) if isinstance(box, OrientedBox) else box
    if not isinstance(box, OrientedBox):
        raise CompileError(f"{sample_id}: OBB output requested but source box is horizontal")
    return box


def compile_detection(sample: SourceSample, box_format: str = "hbb", referring: bool = False,
                      source: str = "", strict: bool = True) -> InstructionRecord:
    p = sample.payload
    if not isinstance(p, Detection):
        raise CompileError(f"{sample.id}: expected a detection payload")
    if box_format not in _BOX_KIND_WORD:
        raise CompileError(f"unknown box format {box_format!r}")
    if not p.instances:
        raise CompileError(f"{sample.id}: no detection instances")
    kind = _BOX_KIND_WORD[box_format]
    items: list[tuple[str, NormalizedBox]] = []
    for inst in p.instances:
        box = _target_box(inst.box, box_format, sample.id)
        try:
            nb = normalize_box(box, sample.image_size, strict=strict)
        except GeometryError as exc:
            raise CompileError(f"{sample.id}: {exc}") from None
        items.append((inst.category, nb))
    rounds = [(DETECTION_PROMPT.format(kind=kind), format_detections(items))]
    if referring:
        categories = list(OrderedDict.fromkeys(cat for cat, _ in items))
        for cat in categories:
            rounds.append((
                REFERRING_PROMPT.format(category=cat, kind=kind),
                format_detections((c, b) for c, b in items if c == cat),
            ))
    task = Task.DETECTION_HBB if box_format == "hbb" else Task.DETECTION_OBB
    return _from_rounds(sample, task, rounds, source)


def compile_grounding(sample: SourceSample, direction: str = "locate", source: str = "",
                      strict: bool = True) -> InstructionRecord:
    p = sample.payload
    if not isinstance(p, Grounding):
        raise CompileError(f"{sample.id}: expected a grounding payload")
    if direction not in ("locate", "describe"):
        raise CompileError(f"unknown grounding direction {direction!r}")
    rounds = []
    for expr, box in p.items:
        if not expr.strip():
            raise CompileError(f"{sample.id}: empty referring expression")
        try:
            text = serialize_box_text(normalize_box(box, sample.image_size, strict=strict))
        except GeometryError as exc:
            raise CompileError(f"{sample.id}: {exc}") from None
        if direction == "locate":
            rounds.append((f"{expr.strip()} {LOCATE_SUFFIX}", text))
        else:
            rounds.append((DESCRIBE_PROMPT.format(box=text), expr.strip()))
    if not rounds:
        raise CompileError(f"{sample.id}: no groundings")
    task = Task.GROUNDING_LOCATE if direction == "locate" else Task.REGION_CAPTION
    return _from_rounds(sample, task, rounds, source)


# -- corpus -----------------------------------------------------------------

SOURCE_TASKS = ("classification", "caption", "vqa", "detection", "grounding")


@dataclass
class SourceSpec:
    name: str
    task: str
    path: Path
    format: str = "jsonl"
    meta: Optional[Path] = None
    box_formats: tuple[str, ...] = ("hbb",)
    referring: bool = False
    directions: tuple[str, ...] = ("locate", "describe")


@dataclass
class CompileOptions:
    strict: bool = True
    seed: int = 0
    shuffle_turns: bool = False
    # CLI overrides; None keeps the manifest setting
    box_format: Optional[str] = None
    referring: Optional[bool] = None


@dataclass
class Manifest:
    sources: list[SourceSpec]
    options: CompileOptions = field(default_factory=CompileOptions)


def load_manifest(path: Union[str, Path]) -> Manifest:
    """Read a YAML (or JSON) manifest; relative paths resolve against its directory."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    base = path.parent
    sources = []
    for i, s in enumerate(raw.get("sources", [])):
        task = s.get("task")
        if task not in SOURCE_TASKS:
            raise ValueError(f"source #{i}: unknown task {task!r}")
        src_path = base / s["path"]
        fmt = s.get("format") or ("dota" if task == "detection" and src_path.is_dir() else
                                  "csv" if task == "classification" else "jsonl")
        box_formats = s.get("box_formats", s.get("box_format", "hbb"))
        if isinstance(box_formats, str):
            box_formats = [box_formats]
        directions = s.get("directions", ["locate", "describe"])
        if isinstance(directions, str):
            directions = [directions]
        sources.append(SourceSpec(
            name=str(s.get("name") or Path(s["path"]).stem),
            task=task,
            path=src_path,
            format=fmt,
            meta=base / s["meta"] if s.get("meta") else None,
            box_formats=tuple(box_formats),
            referring=bool(s.get("referring", False)),
            directions=tuple(directions),
        ))
    opts = CompileOptions(
        strict=bool(raw.get("strict", True)),
        seed=int(raw.get("seed", 0)),
        shuffle_turns=bool(raw.get("shuffle_turns", False)),
    )
    return Manifest(sources, opts)


def parse_source(spec: SourceSpec, strict: bool = True) -> tuple[list[SourceSample], list[Diagnostic]]:
    if spec.task == "classification":
        return parse_classification_manifest(spec.path)
    if spec.task == "caption":
        return parse_caption_file(spec.path, strict)
    if spec.task == "vqa":
        return parse_vqa_file(spec.path, strict)
    if spec.task == "grounding":
        return parse_grounding_file(spec.path, strict)
    if spec.format == "dota":
        if spec.meta is None:
            raise ValueError(f"source {spec.name}: DOTA annotations need a 'meta' CSV")
        return parse_dota_directory(spec.path, spec.meta, strict)
    return parse_detection_file(spec.path, strict)


@dataclass
class StatsRow:
    task: str
    source: str
    modality: Modality
    records: int = 0
    rounds: int = 0


@dataclass
class CorpusStats:
    rows: list[StatsRow]

    @property
    def total_records(self) -> int:
        return sum(r.records for r in self.rows)

    @property
    def total_rounds(self) -> int:
        return sum(r.rounds for r in self.rows)

    @classmethod
    def from_records(cls, records: Iterable[InstructionRecord]) -> "CorpusStats":
        rows: dict[tuple[str, str, Modality], StatsRow] = {}
        for r in records:
            key = (r.task.value, r.source, r.modality)
            row = rows.setdefault(key, StatsRow(*key))
            row.records += 1
            row.rounds += len(r.turns) // 2
        return cls(list(rows.values()))

    def to_tsv(self) -> str:
        lines = ["Task\tData\tSize\tType\tRounds"]
        for r in self.rows:
            lines.append(f"{r.task}\t{r.source}\t{r.records}\t{r.modality.display}\t{r.rounds}")
        lines.append(f"# total_records={self.total_records}\ttotal_rounds={self.total_rounds}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def read_tsv(text: str) -> list[dict[str, str]]:
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        header = lines[0].split("\t")
        return [dict(zip(header, ln.split("\t"))) for ln in lines[1:]]


@dataclass
class CompileResult:
    records: list[InstructionRecord]
    stats: CorpusStats
    diagnostics: list[Diagnostic]
    strict: bool

    @property
    def failed(self) -> bool:
        return self.strict and has_errors(self.diagnostics)


def _compile_sample(sample: SourceSample, spec: SourceSpec, opts: CompileOptions) -> list[InstructionRecord]:
    name = spec.name
    if spec.task == "classification":
        return [compile_classification(sample, name)]
    if spec.task == "caption":
        return [compile_caption(sample, name)]
    if spec.task == "vqa":
        return [compile_vqa(sample, name)]
    if spec.task == "grounding":
        return [compile_grounding(sample, d, name, opts.strict) for d in spec.directions]
    formats = (opts.box_format,) if opts.box_format else spec.box_formats
    referring = spec.referring if opts.referring is None else opts.referring
    return [compile_detection(sample, f, referring, name, opts.strict) for f in formats]


def _shuffle_rounds(record: InstructionRecord, seed: int) -> InstructionRecord:
    rounds = record.rounds
    # the detection overview round stays first; only per-category rounds move
    fixed = 1 if record.task in (Task.DETECTION_HBB, Task.DETECTION_OBB) else 0
    head, tail = rounds[:fixed], rounds[fixed:]
    random.Random(f"{seed}:{record.id}").shuffle(tail)
    turns = tuple(t for h, a in head + tail for t in (Turn("human", h), Turn("assistant", a)))
    return InstructionRecord(record.id, record.image_path, record.modality, record.task, turns, record.source)


def compile_corpus(manifest: Manifest, options: Optional[CompileOptions] = None) -> CompileResult:
    """Parse every source, validate, and compile in (task, source, sample) order."""
    opts = options or manifest.options
    diags: list[Diagnostic] = []
    compiled: list[tuple[int, int, int, InstructionRecord]] = []
    for src_idx, spec in enumerate(manifest.sources):
        samples, parse_diags = parse_source(spec, opts.strict)
        diags.extend(sorted(parse_diags, key=Diagnostic.sort_key))
        diags.extend(validate_corpus(samples))
        for s_idx, sample in enumerate(samples):
            try:
                records = _compile_sample(sample, spec, opts)
            except CompileError as exc:
                fname, line = sample.origin or (None, None)
                diags.append(Diagnostic(sample.id, "error", f"compile error: {exc}", fname, line))
                continue
            for rec in records:
                if opts.shuffle_turns:
                    rec = _shuffle_rounds(rec, opts.seed)
                compiled.append((TASK_ORDER[rec.task], src_idx, s_idx, rec))
    compiled.sort(key=lambda t: t[:3])
    records = [t[3] for t in compiled]
    return CompileResult(records, CorpusStats.from_records(records), diags, opts.strict)


def dump_records(records: Iterable[InstructionRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=False) + "\n" for r in records)


def read_records(path: Union[str, Path]) -> list[InstructionRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(InstructionRecord.from_json(json.loads(line)))
    return out
