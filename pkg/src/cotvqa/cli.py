"""Command-line entry points.

Subcommands: ``ingest`` (validate datasets and print counts), ``captions``
(attach captions and persist the corpus), ``run`` (execute experiments per
manifest), ``eval`` (re-score a stored predictions file), ``table`` (render
the results table from report files), ``losses`` (emit loss CSVs). Every
failure exits nonzero with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .backend import get_backend
from .corpus import (
    Corpus,
    Split,
    attach_captions,
    load_caption_file,
    load_scienceqa,
    load_textvqa,
    select_split,
    write_corpus,
)
from .errors import CotvqaError, ManifestError
from .experiments import (
    ExperimentSpec,
    builtin_specs,
    read_spec_snapshot,
    run_plan,
)
from .manifest import build_manifest, load_manifest_file, parse_experiment_selection
from .metrics import evaluate, parse_report, read_predictions, render_report
from .reporting import (
    build_results_rows,
    emit_loss_curves,
    emit_results_table,
    parse_losses_csv,
)

_RUN_FLAG_KEYS = (
    "records",
    "captions",
    "schema",
    "out_dir",
    "backend",
    "experiments",
    "seed",
    "learning_rate",
    "total_steps",
    "warmup_steps",
    "epochs",
    "batch_size",
    "grad_clip_norm",
    "max_input_tokens",
    "max_output_tokens",
    "decode",
    "beam_width",
)


def _configure_logging() -> None:
    level_name = os.environ.get("COTVQA_LOG_LEVEL", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_corpus(
    records: Path,
    schema: str,
    captions: Path | None,
    strict: bool = True,
    strict_captions: bool = False,
) -> Corpus:
    loader = load_scienceqa if schema == "scienceqa" else load_textvqa
    corpus = loader(records, strict=strict)
    if captions is not None:
        corpus = attach_captions(corpus, load_caption_file(captions), strict=strict_captions)
    return corpus


def _add_dataset_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--records", required=True, help="dataset file, one record per line")
    parser.add_argument("--schema", choices=("scienceqa", "textvqa"), default="scienceqa")
    parser.add_argument("--captions", help="tab-separated image_id/caption file")
    parser.add_argument(
        "--lenient", action="store_true", help="drop invalid records instead of failing"
    )


def _select_specs(selection: tuple[str, ...] | None) -> list[ExperimentSpec]:
    specs = builtin_specs()
    if selection is None:
        return specs
    by_id = {spec.id: spec for spec in specs}
    unknown = [spec_id for spec_id in selection if spec_id not in by_id]
    if unknown:
        raise ManifestError(f"unknown experiment id(s): {', '.join(unknown)}")
    wanted: set[str] = set()
    stack = list(selection)
    while stack:
        spec_id = stack.pop()
        if spec_id in wanted:
            continue
        wanted.add(spec_id)
        stack.extend(by_id[spec_id].dependencies())
    return [spec for spec in specs if spec.id in wanted]


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = _load_corpus(
        Path(args.records),
        args.schema,
        Path(args.captions) if args.captions else None,
        strict=not args.lenient,
    )
    print(f"records: {len(corpus)}")
    for split in Split:
        print(f"{split.value}: {len(select_split(corpus, split))}")
    return 0


def cmd_captions(args: argparse.Namespace) -> int:
    if not args.captions:
        raise ManifestError("captions subcommand requires --captions")
    corpus = _load_corpus(
        Path(args.records),
        args.schema,
        Path(args.captions),
        strict=not args.lenient,
        strict_captions=args.strict,
    )
    write_corpus(corpus, args.out)
    captioned = sum(1 for record in corpus if record.caption)
    print(f"records: {len(corpus)}")
    print(f"captioned: {captioned}")
    print(f"wrote: {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    file_values = load_manifest_file(args.manifest) if args.manifest else {}
    flag_values = {key: getattr(args, key) for key in _RUN_FLAG_KEYS}
    manifest = build_manifest(file_values, flag_values, os.environ.get("COTVQA_OUT_DIR"))
    manifest.validate_paths()

    corpus = _load_corpus(
        manifest.records,
        manifest.schema,
        manifest.captions,
        strict=not args.lenient,
        strict_captions=args.strict_captions,
    )
    specs = _select_specs(manifest.experiments)
    backend = get_backend(manifest.backend)
    config = manifest.train_config()
    registry = run_plan(specs, corpus, config, backend, manifest.out_dir)

    for spec_id in sorted(registry):
        artifacts = registry[spec_id]
        summary = " ".join(
            f"{split.value}_accuracy={report.accuracy * 100:.2f}%"
            for split, report in sorted(artifacts.reports.items(), key=lambda kv: kv[0].value)
        )
        print(f"{spec_id}: {summary}")

    rows = build_results_rows(
        [(a.spec.id, a.spec.task, a.reports) for a in registry.values()]
    )
    emit_results_table(
        rows, manifest.out_dir / "results.txt", manifest.out_dir / "results.csv"
    )
    print(f"results: {manifest.out_dir / 'results.txt'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    artifacts_dir = Path(args.artifacts)
    spec_path = artifacts_dir / "spec.json"
    if not spec_path.is_file():
        raise ManifestError(f"no experiment spec at {spec_path}")
    spec = read_spec_snapshot(spec_path)
    corpus = _load_corpus(
        Path(args.records),
        args.schema,
        Path(args.captions) if args.captions else None,
        strict=not args.lenient,
    )
    split = Split(args.split)
    split_corpus = select_split(corpus, split)
    predictions_path = artifacts_dir / f"predictions_{split.value}.jsonl"
    if not predictions_path.is_file():
        raise ManifestError(f"no predictions file at {predictions_path}")
    rows = read_predictions(predictions_path)
    report = evaluate(rows, split_corpus, spec.task, experiment_id=spec.id, split=split)
    sys.stdout.write(render_report(report))
    return 0


def _scan_artifacts(run_dir: Path) -> list[tuple[str, object, dict]]:
    entries = []
    for sub in sorted(run_dir.iterdir()) if run_dir.is_dir() else []:
        spec_path = sub / "spec.json"
        if not sub.is_dir() or not spec_path.is_file():
            continue
        spec = read_spec_snapshot(spec_path)
        reports = {}
        for split in (Split.TRAIN, Split.VALIDATION):
            report_path = sub / f"report_{split.value}.txt"
            if report_path.is_file():
                reports[split] = parse_report(report_path.read_text(encoding="utf-8"))
        entries.append((spec.id, spec.task, reports))
    return entries


def cmd_table(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ManifestError(f"run directory does not exist: {run_dir}")
    rows = build_results_rows(_scan_artifacts(run_dir))
    text = emit_results_table(rows, run_dir / "results.txt", run_dir / "results.csv")
    sys.stdout.write(text)
    return 0


def cmd_losses(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ManifestError(f"run directory does not exist: {run_dir}")
    emitted = 0
    for sub in sorted(run_dir.iterdir()):
        losses_path = sub / "losses.csv"
        if not sub.is_dir() or not losses_path.is_file():
            continue
        trace = parse_losses_csv(losses_path)
        if args.out:
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            emit_loss_curves(trace, out_dir / f"{sub.name}_losses.csv")
        else:
            sys.stdout.write(f"# {sub.name}\n")
            sys.stdout.write(losses_path.read_text(encoding="utf-8"))
        emitted += 1
    if not emitted:
        raise ManifestError(f"no loss CSVs found under {run_dir}")
    if args.out:
        print(f"wrote {emitted} loss CSV(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotvqa",
        description="Caption-augmented chain-of-thought QA experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate a dataset and print counts")
    _add_dataset_flags(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    p_captions = sub.add_parser("captions", help="attach captions and persist the corpus")
    _add_dataset_flags(p_captions)
    p_captions.add_argument("--out", required=True, help="output corpus file")
    p_captions.add_argument(
        "--strict", action="store_true", help="fail on unknown or missing caption entries"
    )
    p_captions.set_defaults(func=cmd_captions)

    p_run = sub.add_parser("run", help="execute experiments per manifest")
    p_run.add_argument("--manifest", help="flat key = value manifest file")
    p_run.add_argument("--records")
    p_run.add_argument("--captions")
    p_run.add_argument("--schema", choices=("scienceqa", "textvqa"))
    p_run.add_argument("--out-dir")
    p_run.add_argument("--backend")
    p_run.add_argument("--experiments", help="'all' or comma-separated experiment ids")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--learning-rate", type=float)
    p_run.add_argument("--total-steps", type=int)
    p_run.add_argument("--warmup-steps", type=int)
    p_run.add_argument("--epochs", type=int)
    p_run.add_argument("--batch-size", type=int)
    p_run.add_argument("--grad-clip-norm", help="positive number or 'none'")
    p_run.add_argument("--max-input-tokens", type=int)
    p_run.add_argument("--max-output-tokens", type=int)
    p_run.add_argument("--decode", choices=("greedy", "beam"))
    p_run.add_argument("--beam-width", type=int)
    p_run.add_argument("--lenient", action="store_true")
    p_run.add_argument("--strict-captions", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="re-score a stored predictions file")
    p_eval.add_argument("--artifacts", required=True, help="experiment artifacts directory")
    p_eval.add_argument("--split", choices=("train", "validation"), required=True)
    _add_dataset_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_table = sub.add_parser("table", help="render the results table from report files")
    p_table.add_argument("--run-dir", required=True)
    p_table.set_defaults(func=cmd_table)

    p_losses = sub.add_parser("losses", help="emit per-experiment loss CSVs")
    p_losses.add_argument("--run-dir", required=True)
    p_losses.add_argument("--out", help="directory for the emitted CSVs (default: stdout)")
    p_losses.set_defaults(func=cmd_losses)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its diagnostic
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CotvqaError, OSError, ValueError) as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {message}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
