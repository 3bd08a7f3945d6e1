"""Command-line entry point.

Exit status: 0 success, 1 data/compile/evaluation failure, 2 I/O or usage error.
Diagnostics go to stderr; data files are only written on success.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .compiler import (
    CompileOptions,
    CorpusStats,
    compile_corpus,
    dump_records,
    load_manifest,
    parse_source,
    read_records,
)
from .ingest import has_errors, validate_corpus
from .kernels.verify import run_kernel_check
from .metrics.evaluate import (
    EvalMismatch,
    evaluate_answers,
    evaluate_captions,
    evaluate_detection,
    evaluate_grounding,
    load_predictions,
    load_scores,
)

log = logging.getLogger("rsinstruct")

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _mode_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--strict", dest="strict", action="store_true", default=None,
                   help="reject out-of-bounds boxes and abort on any error (default)")
    g.add_argument("--lenient", dest="strict", action="store_false",
                   help="clamp boxes and skip failing samples with diagnostics")


def cmd_compile(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    opts = manifest.options
    options = CompileOptions(
        strict=opts.strict if args.strict is None else args.strict,
        seed=opts.seed if args.seed is None else args.seed,
        shuffle_turns=opts.shuffle_turns or args.shuffle_turns,
        box_format=args.box_format,
        referring=True if args.referring else None,
    )
    result = compile_corpus(manifest, options)
    for d in result.diagnostics:
        _err(str(d))
    if result.failed:
        _err(f"compile failed: {sum(d.severity == 'error' for d in result.diagnostics)} error(s)")
        return EXIT_FAIL
    _write(args.out, dump_records(result.records))
    stats_path = args.stats or (str(Path(args.out).with_suffix("")) + ".stats.tsv" if args.out else None)
    stats_text = result.stats.to_tsv() + f"# seed={options.seed}\n"
    if stats_path:
        _write(stats_path, stats_text)
    _err(f"compiled {len(result.records)} records ({result.stats.total_rounds} rounds)")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    strict = manifest.options.strict if args.strict is None else args.strict
    diags = []
    for spec in manifest.sources:
        samples, d = parse_source(spec, strict)
        diags.extend(sorted(d, key=lambda x: x.sort_key()))
        diags.extend(validate_corpus(samples))
    for d in diags:
        print(str(d))
    n_err = sum(d.severity == "error" for d in diags)
    _err(f"{n_err} error(s), {len(diags) - n_err} warning(s)")
    return EXIT_FAIL if has_errors(diags) else EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    records = read_records(args.records)
    _write(args.out, CorpusStats.from_records(records).to_tsv())
    return EXIT_OK


def _eval(args: argparse.Namespace, task: str) -> int:
    records = read_records(args.gt)
    preds = load_predictions(args.pred)
    try:
        if task == "caption":
            report = evaluate_captions(records, preds, region=args.region)
        elif task in ("vqa", "classification"):
            report = evaluate_answers(records, preds, task)
        elif task == "grounding":
            report = evaluate_grounding(records, preds)
        else:
            scores = load_scores(args.score_file) if args.score_file else None
            thresholds = [args.iou_threshold] if args.iou_threshold is not None else [0.4, 0.5]
            report = evaluate_detection(
                records, preds, thresholds, scores=scores, score_threshold=args.score_threshold,
                strict=True if args.strict is None else args.strict,
            )
    except EvalMismatch as exc:
        _err(f"id mismatch: {exc} (first offending id: {exc.key[0]})")
        return EXIT_FAIL
    except KeyError as exc:
        _err(f"evaluation failed: {exc.args[0] if exc.args else exc}")
        return EXIT_FAIL
    except ValueError as exc:
        _err(f"evaluation failed: {exc}")
        return EXIT_FAIL
    report.meta["seed"] = str(args.seed or 0)
    _write(args.out, report.to_tsv())
    return EXIT_OK


def cmd_kernel_check(args: argparse.Namespace) -> int:
    result = run_kernel_check(args.stage, seed=args.seed or 0, steps=args.steps, corrupt=args.corrupt_grad)
    _write(args.out, result.to_tsv())
    for c in result.gradcheck.failures:
        _err(f"gradcheck FAIL: {c.name} max relative error {c.max_rel_error:.3e}")
    if not result.frozen_unchanged:
        _err("freeze check FAIL: a frozen parameter changed during AdamW steps")
    return EXIT_OK if result.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsinstruct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a manifest into instruction records")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="records file (default: stdout)")
    p.add_argument("--stats", help="stats table path (default: <out>.stats.tsv)")
    _mode_flags(p)
    p.add_argument("--box-format", choices=["hbb", "obb"], help="override detection box format")
    p.add_argument("--referring", action="store_true", help="add per-category detection rounds")
    p.add_argument("--shuffle-turns", action="store_true", help="shuffle rounds with --seed")
    p.add_argument("--seed", type=_seed)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("validate", help="parse and validate sources without compiling")
    p.add_argument("--manifest", required=True)
    _mode_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="per-(task, source, modality) table for a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    for name, task in (("eval-caption", "caption"), ("eval-vqa", "vqa"), ("eval-cls", "classification"),
                       ("eval-ground", "grounding"), ("eval-det", "detection")):
        p = sub.add_parser(name, help=f"score {task} predictions")
        p.add_argument("--gt", required=True, help="compiled records file")
        p.add_argument("--pred", required=True, help="predictions file")
        p.add_argument("--out", help="report path (default: stdout)")
        p.add_argument("--seed", type=_seed)
        if task == "caption":
            p.add_argument("--region", action="store_true", help="score region captions instead")
        if task == "detection":
            p.add_argument("--iou-threshold", type=float, help="single IoU threshold (default: 0.4 and 0.5)")
            p.add_argument("--score-file", help="external confidence scores")
            p.add_argument("--score-threshold", type=float, help="drop detections scoring below this")
            _mode_flags(p)
        p.set_defaults(func=lambda a, t=task: _eval(a, t))

    p = sub.add_parser("kernel-check", help="gradient and freeze checks for a training stage")
    p.add_argument("--stage", required=True, choices=["1", "2", "3"])
    p.add_argument("--seed", type=_seed)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_kernel_check)
    return parser


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, yaml.YAMLError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO
    except (KeyError, ValueError) as exc:
        # malformed manifest or records file
        _err(f"input error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
