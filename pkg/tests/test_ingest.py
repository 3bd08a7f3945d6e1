import json

import pytest

from rsinstruct.compiler import load_manifest, parse_source
from rsinstruct.geometry import HorizontalBox, ImageSize, OrientedBox
from rsinstruct.ingest import (
    Captions,
    Classification,
    Detection,
    Grounding,
    Modality,
    VqaPairs,
    has_errors,
    parse_caption_file,
    parse_classification_manifest,
    parse_detection_file,
    parse_dota_annotation,
    parse_dota_directory,
    parse_grounding_file,
    parse_vqa_file,
    read_image_meta,
    read_samples,
    validate_corpus,
    write_samples,
)
from tests.conftest import CORPUS_MANIFEST, FIXTURES, SMALL_MANIFEST


def _jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def _header(sid="a", modality="optical", size=(100, 100)):
    return {"id": sid, "image_path": f"{sid}.png", "modality": modality, "size": list(size)}


def test_classification_reference_list_sorted(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,image_path,modality,width,height,category\n"
                 "1,a.png,optical,10,10,beach\n2,b.png,sar,10,10,airport\n3,c.png,infrared,10,10,beach\n")
    samples, diags = parse_classification_manifest(p)
    assert diags == []
    assert len(samples) == 3
    assert samples[0].payload == Classification("beach", ("airport", "beach"))
    assert [s.modality for s in samples] == [Modality.OPTICAL, Modality.SAR, Modality.INFRARED]


def test_classification_empty_file(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("")
    assert parse_classification_manifest(p) == ([], [])


def test_classification_unknown_modality(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,image_path,modality,width,height,category\n1,a.png,radar,10,10,beach\n")
    samples, diags = parse_classification_manifest(p)
    assert samples == []
    assert len(diags) == 1 and "unknown modality" in diags[0].message
    assert diags[0].line == 2


def test_classification_missing_column(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,image_path,width,height,category\n1,a.png,10,10,beach\n")
    samples, diags = parse_classification_manifest(p)
    assert samples == [] and has_errors(diags)


def test_classification_empty_category(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,image_path,modality,width,height,category\n1,a.png,optical,10,10,\n")
    samples, diags = parse_classification_manifest(p)
    assert samples == [] and has_errors(diags)


def test_caption_file_keeps_order_and_drops_empty(tmp_path):
    p = _jsonl(tmp_path / "c.jsonl", [
        {**_header(), "captions": ["  b  ", "a", "", "c", "d", "e"]},
    ])
    samples, diags = parse_caption_file(p)
    assert samples[0].payload == Captions(("b", "a", "c", "d", "e"))
    assert [d.severity for d in diags] == ["warning"]


def test_vqa_file_pairs(tmp_path):
    p = _jsonl(tmp_path / "v.jsonl", [
        {**_header(), "qa": [{"question": "Is there a road?", "answer": "yes"},
                             {"question": "How many ships?", "answer": 4}]},
    ])
    samples, diags = parse_vqa_file(p)
    assert samples[0].payload == VqaPairs((("Is there a road?", "yes"), ("How many ships?", "4")))
    assert diags == []


def test_vqa_empty_question_is_warning(tmp_path):
    p = _jsonl(tmp_path / "v.jsonl", [
        {**_header(), "qa": [{"question": " ", "answer": "yes"}, {"question": "Q?", "answer": "no"}]},
    ])
    samples, diags = parse_vqa_file(p)
    assert len(samples[0].payload.pairs) == 1
    assert [d.severity for d in diags] == ["warning"]


def test_grounding_out_of_bounds_strict_vs_lenient(tmp_path):
    p = _jsonl(tmp_path / "g.jsonl", [
        {**_header(), "groundings": [{"expression": "a ship", "box": [80, 80, 120, 95]}]},
    ])
    samples, diags = parse_grounding_file(p, strict=True)
    assert samples == []
    assert any("exceeds image bounds" in d.message and d.severity == "error" for d in diags)
    samples, diags = parse_grounding_file(p, strict=False)
    assert samples[0].payload == Grounding((("a ship", HorizontalBox(80, 80, 100, 95)),))
    assert not has_errors(diags)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({**_header(), "captions": ["x"]}) + "\n{not json\n", encoding="utf-8")
    samples, diags = parse_caption_file(p)
    assert len(samples) == 1
    assert diags[0].line == 2 and diags[0].severity == "error"


def test_size_accepts_object_form(tmp_path):
    p = _jsonl(tmp_path / "c.jsonl", [
        {"id": "a", "image_path": "a.png", "modality": "SAR", "size": {"width": 7, "height": 9}, "captions": ["x"]},
    ])
    samples, _ = parse_caption_file(p)
    assert samples[0].image_size == ImageSize(7, 9)
    assert samples[0].modality is Modality.SAR


def test_detection_file_hbb_and_obb(tmp_path):
    p = _jsonl(tmp_path / "d.jsonl", [
        {**_header(), "objects": [{"category": "ship", "box": [1, 2, 3, 4]},
                                  {"category": "plane", "box": [3, 3, 1, 3, 1, 1, 3, 1], "difficult": 1}]},
    ])
    samples, diags = parse_detection_file(p)
    inst = samples[0].payload.instances
    assert isinstance(inst[0].box, HorizontalBox)
    assert isinstance(inst[1].box, OrientedBox) and inst[1].difficult
    assert inst[1].box.points == ((1, 1), (3, 1), (3, 3), (1, 3))


def _meta(tmp_path, size=(10, 10)):
    p = tmp_path / "meta.csv"
    p.write_text(f"id,image_path,modality,width,height\nimg,img.png,optical,{size[0]},{size[1]}\n")
    metas, diags = read_image_meta(p)
    assert diags == []
    return metas["img"]


def test_dota_line_canonicalized(tmp_path):
    ann = tmp_path / "img.txt"
    ann.write_text("imagesource:GoogleEarth\ngsd:0.5\n1 1 3 1 3 3 1 3 plane 0\n")
    sample, diags = parse_dota_annotation(ann, _meta(tmp_path))
    assert diags == []
    (inst,) = sample.payload.instances
    assert inst.category == "plane" and not inst.difficult
    assert inst.box.points == ((1, 1), (3, 1), (3, 3), (1, 3))
    assert sample.origin == (str(ann), 3)


@pytest.mark.parametrize("line,msg", [
    ("1 1 3 1 3 3 1 3 plane", "expected 10 tokens"),
    ("1 1 3 x 3 3 1 3 plane 0", "non-numeric"),
    ("0 0 1 1 2 2 3 3 plane 0", "degenerate"),
    ("1 1 3 1 3 3 1 3 plane 2", "difficult flag"),
])
def test_dota_bad_lines(tmp_path, line, msg):
    ann = tmp_path / "img.txt"
    ann.write_text(line + "\n2 2 4 2 4 4 2 4 ship 1\n")
    sample, diags = parse_dota_annotation(ann, _meta(tmp_path))
    assert len(sample.payload.instances) == 1
    assert len(diags) == 1 and msg in diags[0].message and diags[0].line == 1


def test_dota_directory_fixture():
    samples, diags = parse_dota_directory(FIXTURES / "corpus" / "dota" / "labelTxt",
                                          FIXTURES / "corpus" / "dota" / "images.csv")
    assert diags == []
    assert [s.id for s in samples] == [f"P{i:04d}" for i in range(6)]
    assert all(isinstance(s.payload, Detection) for s in samples)


def test_validate_duplicate_id_and_caption(tmp_path):
    p = _jsonl(tmp_path / "c.jsonl", [
        {**_header("x"), "captions": ["a port", "a port"]},
        {**_header("x"), "captions": ["a road"]},
    ])
    samples, _ = parse_caption_file(p)
    diags = validate_corpus(samples)
    assert [(d.severity, d.message) for d in diags] == [
        ("warning", "duplicate caption: 'a port'"), ("error", "duplicate sample id")]


def test_validate_clean_fixture_has_no_diagnostics():
    manifest = load_manifest(SMALL_MANIFEST)
    for spec in manifest.sources:
        samples, diags = parse_source(spec)
        assert diags == []
        assert validate_corpus(samples) == []


def test_canonical_roundtrip(tmp_path):
    manifest = load_manifest(CORPUS_MANIFEST)
    for spec in manifest.sources:
        samples, _ = parse_source(spec)
        out = tmp_path / f"{spec.name}.jsonl"
        write_samples(samples, out)
        again, diags = read_samples(out)
        assert diags == []
        assert again == samples


def test_every_row_accounted_for(tmp_path):
    rows = [{**_header("ok"), "captions": ["x"]}, {**_header("bad"), "captions": "oops"},
            {"id": "nomod", "image_path": "n.png", "size": [5, 5], "captions": ["y"]}]
    p = _jsonl(tmp_path / "c.jsonl", rows)
    samples, diags = parse_caption_file(p)
    rejected = {d.sample_id for d in diags if d.severity == "error"}
    assert {s.id for s in samples} | rejected == {"ok", "bad", "nomod"}
