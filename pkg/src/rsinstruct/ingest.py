"""Parsers turning source annotation files into :class:`SourceSample` records.

Supported inputs:

* classification manifests (CSV: ``id,image_path,modality,width,height,category``)
* canonical line-delimited JSON task files (captions / VQA / grounding /
  detection objects), one image per line
* DOTA ``.txt`` annotations (``x1 y1 ... x4 y4 category difficult``) with a
  side CSV of image metadata

Parsers never raise on bad content. Each input row either becomes a sample or
produces at least one error :class:`Diagnostic`.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .geometry import (
    Box,
    GeometryError,
    HorizontalBox,
    ImageSize,
    box_within,
    canonicalize_obb,
    clamp_box,
)

logger = logging.getLogger(__name__)


class Modality(str, Enum):
    OPTICAL = "optical"
    SAR = "sar"
    INFRARED = "infrared"

    @classmethod
    def parse(cls, text: str) -> "Modality":
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"unknown modality {text!r}") from None

    @property
    def display(self) -> str:
        return {"optical": "optical", "sar": "SAR", "infrared": "infrared"}[self.value]


@dataclass(frozen=True)
class Classification:
    category: str
    reference_categories: tuple[str, ...]


@dataclass(frozen=True)
class Captions:
    texts: tuple[str, ...]


@dataclass(frozen=True)
class VqaPairs:
    pairs: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class DetectionInstance:
    category: str
    box: Box
    difficult: bool = False


@dataclass(frozen=True)
class Detection:
    instances: tuple[DetectionInstance, ...]


@dataclass(frozen=True)
class Grounding:
    items: tuple[tuple[str, HorizontalBox], ...]


Payload = Union[Classification, Captions, VqaPairs, Detection, Grounding]


@dataclass(frozen=True)
class SourceSample:
    id: str
    image_path: str
    modality: Modality
    image_size: ImageSize
    payload: Payload
    # (file, line) the sample was read from; not part of sample identity
    origin: Optional[tuple[str, int]] = field(default=None, compare=False)


@dataclass(frozen=True)
class Diagnostic:
    sample_id: Optional[str]
    severity: str  # "warning" | "error"
    message: str
    file: Optional[str] = None
    line: Optional[int] = None

    def __str__(self) -> str:
        loc = ""
        if self.file is not None:
            loc = f"{self.file}:{self.line}: " if self.line is not None else f"{self.file}: "
        sid = f"[{self.sample_id}] " if self.sample_id is not None else ""
        return f"{loc}{self.severity}: {sid}{self.message}"

    def sort_key(self) -> tuple:
        return (self.file or "", self.line or 0)


ParseResult = tuple[list[SourceSample], list[Diagnostic]]


def has_errors(diags: Iterable[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diags)


CLASSIFICATION_COLUMNS = ("id", "image_path", "modality", "width", "height", "category")


def parse_classification_manifest(path: Union[str, Path]) -> ParseResult:
    """Read a classification CSV; the reference list is the file's sorted category set."""
    path = Path(path)
    fname = str(path)
    rows: list[tuple[int, dict]] = []
    diags: list[Diagnostic] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            line = reader.line_num
            sid = (row.get("id") or "").strip() or None
            missing = [c for c in CLASSIFICATION_COLUMNS if row.get(c) is None]
            if missing:
                diags.append(Diagnostic(sid, "error", f"missing column(s): {', '.join(missing)}", fname, line))
                continue
            if not sid:
                diags.append(Diagnostic(None, "error", "empty id", fname, line))
                continue
            category = row["category"].strip()
            if not category:
                diags.append(Diagnostic(sid, "error", "empty category", fname, line))
                continue
            try:
                modality = Modality.parse(row["modality"])
            except ValueError as exc:
                diags.append(Diagnostic(sid, "error", str(exc), fname, line))
                continue
            try:
                size = ImageSize(int(row["width"]), int(row["height"]))
            except (ValueError, GeometryError) as exc:
                diags.append(Diagnostic(sid, "error", f"invalid image size: {exc}", fname, line))
                continue
            rows.append((line, dict(id=sid, image_path=row["image_path"].strip(),
                                    modality=modality, size=size, category=category)))
    refs = tuple(sorted({r["category"] for _, r in rows}))
    samples = [
        SourceSample(
            r["id"], r["image_path"], r["modality"], r["size"],
            Classification(r["category"], refs), origin=(fname, line),
        )
        for line, r in rows
    ]
    return samples, diags


def _read_json_lines(path: Path, diags: list[Diagnostic]) -> list[tuple[int, dict]]:
    fname = str(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                diags.append(Diagnostic(None, "error", f"malformed line: {exc.msg}", fname, lineno))
                continue
            if not isinstance(obj, dict):
                diags.append(Diagnostic(None, "error", "malformed line: expected an object", fname, lineno))
                continue
            out.append((lineno, obj))
    return out


def _parse_size(obj: dict) -> ImageSize:
    size = obj.get("size")
    if isinstance(size, dict):
        return ImageSize(int(size["width"]), int(size["height"]))
    if isinstance(size, (list, tuple)) and len(size) == 2:
        return ImageSize(int(size[0]), int(size[1]))
    if "width" in obj and "height" in obj:
        return ImageSize(int(obj["width"]), int(obj["height"]))
    raise ValueError("missing or malformed size")


def _parse_header(obj: dict, fname: str, lineno: int, diags: list[Diagnostic]):
    sid = obj.get("id")
    if sid is None or str(sid).strip() == "":
        diags.append(Diagnostic(None, "error", "missing id", fname, lineno))
        return None
    sid = str(sid)
    if "image_path" not in obj and "image" not in obj:
        diags.append(Diagnostic(sid, "error", "missing image_path", fname, lineno))
        return None
    try:
        modality = Modality.parse(obj.get("modality", ""))
    except ValueError as exc:
        diags.append(Diagnostic(sid, "error", str(exc), fname, lineno))
        return None
    try:
        size = _parse_size(obj)
    except (KeyError, TypeError, ValueError, GeometryError) as exc:
        diags.append(Diagnostic(sid, "error", f"invalid image size: {exc}", fname, lineno))
        return None
    return sid, str(obj.get("image_path", obj.get("image"))), modality, size


def _text(value) -> str:
    return value.strip() if isinstance(value, str) else ""


def _bounded_box(box: Box, size: ImageSize, strict: bool, sid: str, fname: str,
                 lineno: int, diags: list[Diagnostic]) -> Optional[Box]:
    if box_within(box, size):
        return box
    if strict:
        diags.append(Diagnostic(sid, "error", f"box exceeds image bounds {size.width}x{size.height}", fname, lineno))
        return None
    try:
        clamped = clamp_box(box, size)
    except GeometryError as exc:
        diags.append(Diagnostic(sid, "error", f"box collapses when clamped: {exc}", fname, lineno))
        return None
    diags.append(Diagnostic(sid, "warning", "box clamped to image bounds", fname, lineno))
    return clamped


def _raw_box(values, size: ImageSize, strict: bool) -> Box:
    """Build a box from 4 (HBB) or 8 (quad) numbers; lenient mode clamps HBB first."""
    if not isinstance(values, (list, tuple)) or len(values) not in (4, 8):
        raise GeometryError(f"box must have 4 or 8 numbers, got {values!r}")
    nums = [float(v) for v in values]
    if len(nums) == 8:
        return canonicalize_obb([(nums[i], nums[i + 1]) for i in range(0, 8, 2)])
    if not strict:
        nums = [min(max(nums[0], 0.0), size.width), min(max(nums[1], 0.0), size.height),
                min(max(nums[2], 0.0), size.width), min(max(nums[3], 0.0), size.height)]
    return HorizontalBox(*nums)


def _parse_task_file(path: Union[str, Path], key: str, strict: bool = True) -> ParseResult:
    path = Path(path)
    fname = str(path)
    diags: list[Diagnostic] = []
    samples: list[SourceSample] = []
    for lineno, obj in _read_json_lines(path, diags):
        header = _parse_header(obj, fname, lineno, diags)
        if header is None:
            continue
        sid, image_path, modality, size = header
        entries = obj.get(key)
        if not isinstance(entries, list):
            diags.append(Diagnostic(sid, "error", f"missing or malformed '{key}' list", fname, lineno))
            continue
        payload = _PAYLOAD_BUILDERS[key](entries, sid, size, strict, fname, lineno, diags)
        if payload is None:
            continue
        samples.append(SourceSample(sid, image_path, modality, size, payload, origin=(fname, lineno)))
    return samples, diags


def _build_captions(entries, sid, size, strict, fname, lineno, diags):
    texts = []
    for i, c in enumerate(entries):
        t = _text(c)
        if not t:
            diags.append(Diagnostic(sid, "warning", f"empty caption #{i} dropped", fname, lineno))
            continue
        texts.append(t)
    if not texts:
        diags.append(Diagnostic(sid, "error", "empty payload: no captions", fname, lineno))
        return None
    return Captions(tuple(texts))


def _build_vqa(entries, sid, size, strict, fname, lineno, diags):
    pairs = []
    for i, qa in enumerate(entries):
        if isinstance(qa, dict):
            q, a = _text(qa.get("question")), qa.get("answer")
        elif isinstance(qa, (list, tuple)) and len(qa) == 2:
            q, a = _text(qa[0]), qa[1]
        else:
            diags.append(Diagnostic(sid, "error", f"malformed QA entry #{i}", fname, lineno))
            continue
        a = _text(a) if isinstance(a, str) else ("" if a is None else str(a))
        if not q:
            diags.append(Diagnostic(sid, "warning", f"empty question #{i} dropped", fname, lineno))
            continue
        if not a:
            diags.append(Diagnostic(sid, "warning", f"empty answer #{i} dropped", fname, lineno))
            continue
        pairs.append((q, a))
    if not pairs:
        diags.append(Diagnostic(sid, "error", "empty payload: no QA pairs", fname, lineno))
        return None
    return VqaPairs(tuple(pairs))


def _build_groundings(entries, sid, size, strict, fname, lineno, diags):
    items = []
    for i, g in enumerate(entries):
        if not isinstance(g, dict):
            diags.append(Diagnostic(sid, "error", f"malformed grounding entry #{i}", fname, lineno))
            continue
        expr = _text(g.get("expression"))
        if not expr:
            diags.append(Diagnostic(sid, "warning", f"empty expression #{i} dropped", fname, lineno))
            continue
        raw = g.get("box")
        if not isinstance(raw, (list, tuple)) or len(raw) != 4:
            diags.append(Diagnostic(sid, "error", f"grounding box #{i} must have 4 numbers", fname, lineno))
            continue
        try:
            box = _raw_box(raw, size, strict)
        except (GeometryError, TypeError, ValueError) as exc:
            diags.append(Diagnostic(sid, "error", f"invalid box #{i}: {exc}", fname, lineno))
            continue
        box = _bounded_box(box, size, strict, sid, fname, lineno, diags)
        if box is None:
            continue
        items.append((expr, box))
    if not items:
        diags.append(Diagnostic(sid, "error", "empty payload: no groundings", fname, lineno))
        return None
    return Grounding(tuple(items))


def _build_objects(entries, sid, size, strict, fname, lineno, diags):
    instances = []
    for i, o in enumerate(entries):
        if not isinstance(o, dict):
            diags.append(Diagnostic(sid, "error", f"malformed object #{i}", fname, lineno))
            continue
        cat = _text(o.get("category"))
        if not cat:
            diags.append(Diagnostic(sid, "error", f"object #{i} has empty category", fname, lineno))
            continue
        try:
            box = _raw_box(o.get("box"), size, strict)
        except (GeometryError, TypeError, ValueError) as exc:
            diags.append(Diagnostic(sid, "error", f"invalid box #{i}: {exc}", fname, lineno))
            continue
        box = _bounded_box(box, size, strict, sid, fname, lineno, diags)
        if box is None:
            continue
        instances.append(DetectionInstance(cat, box, bool(o.get("difficult", False))))
    if not instances:
        diags.append(Diagnostic(sid, "error", "empty payload: no objects", fname, lineno))
        return None
    return Detection(tuple(instances))


def _build_classification(obj_entry, sid, size, strict, fname, lineno, diags):
    cat = _text(obj_entry.get("category"))
    refs = obj_entry.get("reference_categories") or []
    if not cat:
        diags.append(Diagnostic(sid, "error", "empty category", fname, lineno))
        return None
    return Classification(cat, tuple(str(r) for r in refs))


_PAYLOAD_BUILDERS = {
    "captions": _build_captions,
    "qa": _build_vqa,
    "groundings": _build_groundings,
    "objects": _build_objects,
}


def parse_caption_file(path: Union[str, Path], strict: bool = True) -> ParseResult:
    return _parse_task_file(path, "captions", strict)


def parse_vqa_file(path: Union[str, Path], strict: bool = True) -> ParseResult:
    return _parse_task_file(path, "qa", strict)


def parse_grounding_file(path: Union[str, Path], strict: bool = True) -> ParseResult:
    return _parse_task_file(path, "groundings", strict)


def parse_detection_file(path: Union[str, Path], strict: bool = True) -> ParseResult:
    return _parse_task_file(path, "objects", strict)


@dataclass(frozen=True)
class ImageMeta:
    id: str
    image_path: str
    modality: Modality
    image_size: ImageSize


def read_image_meta(path: Union[str, Path]) -> tuple[dict[str, ImageMeta], list[Diagnostic]]:
    """Image metadata CSV with columns ``id,image_path,modality,width,height``."""
    path = Path(path)
    metas: dict[str, ImageMeta] = {}
    diags: list[Diagnostic] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            line = reader.line_num
            sid = (row.get("id") or "").strip()
            try:
                metas[sid] = ImageMeta(
                    sid, (row["image_path"] or "").strip(), Modality.parse(row["modality"] or ""),
                    ImageSize(int(row["width"]), int(row["height"])),
                )
            except (KeyError, TypeError, ValueError, GeometryError) as exc:
                diags.append(Diagnostic(sid or None, "error", f"bad image metadata: {exc}", str(path), line))
    return metas, diags


_DOTA_HEADERS = ("imagesource:", "gsd:")


def parse_dota_annotation(path: Union[str, Path], meta: ImageMeta,
                          strict: bool = True) -> tuple[Optional[SourceSample], list[Diagnostic]]:
    path = Path(path)
    fname = str(path)
    sid = meta.id
    diags: list[Diagnostic] = []
    instances: list[DetectionInstance] = []
    first_line = None
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.lower().startswith(_DOTA_HEADERS):
                continue
            first_line = first_line or lineno
            tokens = line.split()
            if len(tokens) != 10:
                diags.append(Diagnostic(sid, "error", f"expected 10 tokens, got {len(tokens)}", fname, lineno))
                continue
            try:
                coords = [float(t) for t in tokens[:8]]
            except ValueError:
                diags.append(Diagnostic(sid, "error", "non-numeric coordinate", fname, lineno))
                continue
            if tokens[9] not in ("0", "1"):
                diags.append(Diagnostic(sid, "error", f"difficult flag must be 0 or 1, got {tokens[9]!r}", fname, lineno))
                continue
            try:
                box: Optional[Box] = canonicalize_obb([(coords[i], coords[i + 1]) for i in range(0, 8, 2)])
            except GeometryError as exc:
                diags.append(Diagnostic(sid, "error", f"degenerate quad: {exc}", fname, lineno))
                continue
            box = _bounded_box(box, meta.image_size, strict, sid, fname, lineno, diags)
            if box is None:
                continue
            instances.append(DetectionInstance(tokens[8], box, tokens[9] == "1"))
    if not instances:
        if first_line is None:
            diags.append(Diagnostic(sid, "warning", "annotation has no objects; image skipped", fname, None))
        else:
            diags.append(Diagnostic(sid, "error", "empty payload: no valid objects", fname, None))
        return None, diags
    sample = SourceSample(sid, meta.image_path, meta.modality, meta.image_size,
                          Detection(tuple(instances)), origin=(fname, first_line or 1))
    return sample, diags


def parse_dota_directory(ann_dir: Union[str, Path], meta_path: Union[str, Path],
                         strict: bool = True) -> ParseResult:
    """Parse every ``<id>.txt`` under ``ann_dir``; ids come from the file stem."""
    ann_dir = Path(ann_dir)
    metas, diags = read_image_meta(meta_path)
    samples: list[SourceSample] = []
    for txt in sorted(ann_dir.glob("*.txt")):
        meta = metas.get(txt.stem)
        if meta is None:
            diags.append(Diagnostic(txt.stem, "error", "no image metadata for annotation", str(txt), None))
            continue
        sample, d = parse_dota_annotation(txt, meta, strict)
        diags.extend(d)
        if sample is not None:
            samples.append(sample)
    return samples, diags


def validate_corpus(samples: Sequence[SourceSample]) -> list[Diagnostic]:
    """Cross-sample checks: duplicate ids, duplicate captions, box bounds, empty payloads.

    Only duplicate-caption detection comes from the published cleaning step;
    the remaining checks are house rules.
    """
    diags: list[Diagnostic] = []
    seen: set[str] = set()
    for s in samples:
        fname, line = s.origin if s.origin else (None, None)
        if s.id in seen:
            diags.append(Diagnostic(s.id, "error", "duplicate sample id", fname, line))
        seen.add(s.id)
        p = s.payload
        if isinstance(p, Captions):
            if not p.texts:
                diags.append(Diagnostic(s.id, "error", "empty payload", fname, line))
            for text, n in Counter(p.texts).items():
                for _ in range(n - 1):
                    diags.append(Diagnostic(s.id, "warning", f"duplicate caption: {text!r}", fname, line))
        elif isinstance(p, VqaPairs):
            if not p.pairs:
                diags.append(Diagnostic(s.id, "error", "empty payload", fname, line))
        elif isinstance(p, Classification):
            if p.category not in p.reference_categories:
                diags.append(Diagnostic(s.id, "error", "category missing from reference list", fname, line))
        elif isinstance(p, (Detection, Grounding)):
            boxes = [i.box for i in p.instances] if isinstance(p, Detection) else [b for _, b in p.items]
            if not boxes:
                diags.append(Diagnostic(s.id, "error", "empty payload", fname, line))
            for box in boxes:
                if not box_within(box, s.image_size):
                    diags.append(Diagnostic(s.id, "error", "box exceeds image bounds", fname, line))
    return diags


def sample_to_json(s: SourceSample) -> dict:
    obj: dict = {
        "id": s.id,
        "image_path": s.image_path,
        "modality": s.modality.value,
        "size": [s.image_size.width, s.image_size.height],
    }
    p = s.payload
    if isinstance(p, Classification):
        obj["category"] = p.category
        obj["reference_categories"] = list(p.reference_categories)
    elif isinstance(p, Captions):
        obj["captions"] = list(p.texts)
    elif isinstance(p, VqaPairs):
        obj["qa"] = [{"question": q, "answer": a} for q, a in p.pairs]
    elif isinstance(p, Grounding):
        obj["groundings"] = [{"expression": e, "box": list(b.as_tuple())} for e, b in p.items]
    elif isinstance(p, Detection):
        obj["objects"] = [
            {
                "category": i.category,
                "box": list(i.box.as_tuple() if isinstance(i.box, HorizontalBox) else i.box.as_flat()),
                "difficult": int(i.difficult),
            }
            for i in p.instances
        ]
    return obj


def write_samples(samples: Iterable[SourceSample], path: Union[str, Path]) -> None:
    """Write samples in the canonical line-delimited format read by :func:`read_samples`."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_json(s), ensure_ascii=False) + "\n")


def read_samples(path: Union[str, Path], strict: bool = True) -> ParseResult:
    """Read a canonical sample file of any task; the payload key decides the task."""
    path = Path(path)
    fname = str(path)
    diags: list[Diagnostic] = []
    samples: list[SourceSample] = []
    for lineno, obj in _read_json_lines(path, diags):
        header = _parse_header(obj, fname, lineno, diags)
        if header is None:
            continue
        sid, image_path, modality, size = header
        payload = None
        for key, build in _PAYLOAD_BUILDERS.items():
            if key in obj:
                if not isinstance(obj[key], list):
                    diags.append(Diagnostic(sid, "error", f"malformed '{key}' list", fname, lineno))
                    break
                payload = build(obj[key], sid, size, strict, fname, lineno, diags)
                break
        else:
            if "category" in obj:
                payload = _build_classification(obj, sid, size, strict, fname, lineno, diags)
            else:
                diags.append(Diagnostic(sid, "error", "no recognizable payload", fname, lineno))
        if payload is not None:
            samples.append(SourceSample(sid, image_path, modality, size, payload, origin=(fname, lineno)))
    return samples, diags
