"""Experiment definitions, dependency resolution, and execution.

Six built-in experiments cover the caption ablation, joint answer/explanation
generation, checkpoint warm starts, and the two-stage explanation feedback
loop. Warm starts load the parent experiment's checkpoint; explanation
consumers feed on text generated by their provider model, never on gold
explanations. Explanations are generated once per split and cached.

Each experiment persists an artifacts directory: spec and config snapshots,
the checkpoint, ``losses.csv``, one predictions file and one report file per
split.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .backend import (
    ANSWER_TOKEN_BUDGET,
    EXPLANATION_TOKEN_BUDGET,
    ModelHandle,
    Pair,
    Seq2SeqBackend,
    TrainConfig,
    TrainingTrace,
)
from .corpus import Corpus, QARecord, Split, select_split
from .errors import BackendError, ExperimentError
from .metrics import EvalReport, PredictionRow, evaluate, render_report, write_predictions
from .prompts import ParsedOutput, TaskKind, build_input, build_target, match_answer, parse_output
from .reporting import emit_loss_curves
from .textnorm import normalize_text

log = logging.getLogger(__name__)

BUILTIN_IDS = ("model1", "model2", "model3", "model4", "model5", "model6")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment configuration.

    ``init_from`` warm-starts training from another experiment's checkpoint;
    ``explanation_provider`` names the experiment whose trained model
    generates the input explanations, and is set exactly for the
    answer-given-explanation task.
    """

    id: str
    task: TaskKind
    use_captions: bool
    init_from: str | None = None
    explanation_provider: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ExperimentError("experiment id must be non-empty")
        needs_provider = self.task is TaskKind.ANSWER_GIVEN_EXPLANATION
        if (self.explanation_provider is not None) != needs_provider:
            raise ExperimentError(
                f"experiment {self.id!r}: explanation_provider must be set exactly "
                f"for the answer-given-explanation task"
            )

    def dependencies(self) -> tuple[str, ...]:
        deps = [d for d in (self.init_from, self.explanation_provider) if d is not None]
        return tuple(dict.fromkeys(deps))


def builtin_specs() -> list[ExperimentSpec]:
    """The six standard experiments."""
    return [
        ExperimentSpec(id="model1", task=TaskKind.ANSWER, use_captions=False),
        ExperimentSpec(id="model2", task=TaskKind.ANSWER, use_captions=True),
        ExperimentSpec(id="model3", task=TaskKind.ANSWER_AND_EXPLANATION, use_captions=True),
        ExperimentSpec(
            id="model4",
            task=TaskKind.ANSWER_AND_EXPLANATION,
            use_captions=True,
            init_from="model2",
        ),
        ExperimentSpec(
            id="model5",
            task=TaskKind.ANSWER_GIVEN_EXPLANATION,
            use_captions=True,
            explanation_provider="model4",
        ),
        ExperimentSpec(
            id="model6",
            task=TaskKind.ANSWER_GIVEN_EXPLANATION,
            use_captions=True,
            init_from="model2",
            explanation_provider="model4",
        ),
    ]


def resolve_order(specs: Sequence[ExperimentSpec]) -> list[ExperimentSpec]:
    """Topological execution order over warm-start and provider edges.

    Ties break by experiment id. Raises on duplicate ids, references to
    unknown ids, providers that do not generate explanations, and cycles
    (naming the experiments involved).
    """
    by_id: dict[str, ExperimentSpec] = {}
    for spec in specs:
        if spec.id in by_id:
            raise ExperimentError(f"duplicate experiment id {spec.id!r}")
        by_id[spec.id] = spec
    children: dict[str, list[str]] = {spec_id: [] for spec_id in by_id}
    indegree: dict[str, int] = {spec_id: 0 for spec_id in by_id}
    for spec in specs:
        for dep in spec.dependencies():
            if dep not in by_id:
                raise ExperimentError(
                    f"experiment {spec.id!r} references unknown id {dep!r}"
                )
            children[dep].append(spec.id)
            indegree[spec.id] += 1
        if spec.explanation_provider is not None:
            provider = by_id.get(spec.explanation_provider)
            if provider is not None and provider.task is not TaskKind.ANSWER_AND_EXPLANATION:
                raise ExperimentError(
                    f"experiment {spec.id!r}: provider {provider.id!r} does not "
                    f"generate explanations"
                )
    ready = [spec_id for spec_id, degree in indegree.items() if degree == 0]
    heapq.heapify(ready)
    ordered: list[ExperimentSpec] = []
    while ready:
        spec_id = heapq.heappop(ready)
        ordered.append(by_id[spec_id])
        for child in sorted(children[spec_id]):
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, child)
    if len(ordered) != len(by_id):
        cycle = sorted(spec_id for spec_id, degree in indegree.items() if degree > 0)
        raise ExperimentError(f"dependency cycle among: {', '.join(cycle)}")
    return ordered


def resolved_config(config: TrainConfig, task: TaskKind) -> TrainConfig:
    """Fill unset token budgets with the task-appropriate defaults."""
    budget = (
        EXPLANATION_TOKEN_BUDGET
        if task is TaskKind.ANSWER_AND_EXPLANATION
        else ANSWER_TOKEN_BUDGET
    )
    updates = {}
    if config.max_input_tokens is None:
        updates["max_input_tokens"] = budget
    if config.max_output_tokens is None:
        updates["max_output_tokens"] = budget
    return replace(config, **updates) if updates else config


@dataclass(frozen=True)
class ExplanationStore:
    """Model-generated explanations for every record of one split."""

    experiment_id: str
    split: Split | None
    entries: dict[str, str]

    def get(self, record_id: str) -> str:
        if record_id not in self.entries:
            raise ExperimentError(
                f"no stored explanation for record {record_id!r} "
                f"(provider {self.experiment_id})"
            )
        return self.entries[record_id]


@dataclass
class ExperimentArtifacts:
    """Everything one experiment run produced, in memory."""

    spec: ExperimentSpec
    handle: ModelHandle
    trace: TrainingTrace
    reports: dict[Split, EvalReport]
    checkpoint_dir: Path
    train_pairs: tuple[Pair, ...] = ()
    val_pairs: tuple[Pair, ...] = ()
    inference_inputs: dict[Split, tuple[str, ...]] = field(default_factory=dict)
    predictions: dict[Split, tuple[PredictionRow, ...]] = field(default_factory=dict)
    explanation_stores: dict[Split, ExplanationStore] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for report in self.reports.values():
            if report.experiment_id != self.spec.id:
                raise ExperimentError(
                    f"report for {report.experiment_id!r} attached to "
                    f"experiment {self.spec.id!r}"
                )


Registry = dict[str, ExperimentArtifacts]


def generate_explanations(
    backend: Seq2SeqBackend,
    provider_spec: ExperimentSpec,
    provider_handle: ModelHandle,
    corpus: Corpus,
    config: TrainConfig,
) -> ExplanationStore:
    """Generate and parse one explanation per record with the provider model.

    Unparseable outputs are stored as empty strings and counted.
    """
    if provider_spec.task is not TaskKind.ANSWER_AND_EXPLANATION:
        raise ExperimentError(
            f"provider {provider_spec.id!r} does not generate explanations"
        )
    cfg = resolved_config(config, provider_spec.task)
    entries: dict[str, str] = {}
    failures = 0
    for record in corpus:
        source = build_input(
            record, provider_spec.task, provider_spec.use_captions, max_tokens=cfg.max_input_tokens
        )
        output = backend.generate(provider_handle, source, cfg.max_output_tokens)
        parsed = parse_output(output, provider_spec.task)
        entries[record.id] = parsed.explanation_text or ""
        if not parsed.parse_ok:
            failures += 1
    if failures:
        log.warning(
            "provider %s: stored %d empty explanation(s) for unparseable output",
            provider_spec.id,
            failures,
        )
    split = corpus.records[0].split if corpus.records else None
    return ExplanationStore(experiment_id=provider_spec.id, split=split, entries=entries)


def consistency_check(parsed: ParsedOutput, record: QARecord) -> bool:
    """Whether a generated explanation agrees with the predicted answer.

    Inconsistent iff the normalized explanation mentions some other choice
    and does not mention the predicted answer. An empty explanation is
    vacuously consistent.
    """
    explanation_norm = normalize_text(parsed.explanation_text or "")
    if not explanation_norm:
        return True
    predicted_norm = normalize_text(parsed.answer_text)
    predicted_index = match_answer(parsed.answer_text, record)
    mentions_answer = bool(predicted_norm) and predicted_norm in explanation_norm
    if (
        not mentions_answer
        and isinstance(predicted_index, int)
        and not isinstance(predicted_index, bool)
    ):
        choice_norm = normalize_text(record.choices[predicted_index])
        mentions_answer = bool(choice_norm) and choice_norm in explanation_norm
    if mentions_answer:
        return True
    for i, choice in enumerate(record.choices):
        if i == predicted_index:
            continue
        choice_norm = normalize_text(choice)
        if choice_norm and choice_norm in explanation_norm:
            return False
    return True


def two_stage_infer(
    backend: Seq2SeqBackend,
    provider_handle: ModelHandle,
    answer_handle: ModelHandle,
    record: QARecord,
    config: TrainConfig,
    use_captions: bool = True,
) -> ParsedOutput:
    """Explanation-then-answer inference for a single record.

    Stage A generates and parses an explanation; stage B consumes it in an
    answer-given-explanation input and produces the final answer. The result
    is the stage-B parse with the stage-A explanation attached. Unparseable
    stage-A output feeds an empty explanation forward.
    """
    provider_cfg = resolved_config(config, TaskKind.ANSWER_AND_EXPLANATION)
    answer_cfg = resolved_config(config, TaskKind.ANSWER_GIVEN_EXPLANATION)
    stage_a_input = build_input(
        record, TaskKind.ANSWER_AND_EXPLANATION, use_captions, max_tokens=provider_cfg.max_input_tokens
    )
    stage_a_output = backend.generate(
        provider_handle, stage_a_input, provider_cfg.max_output_tokens
    )
    stage_a = parse_output(stage_a_output, TaskKind.ANSWER_AND_EXPLANATION)
    explanation = stage_a.explanation_text or ""
    stage_b_input = build_input(
        record,
        TaskKind.ANSWER_GIVEN_EXPLANATION,
        use_captions,
        explanation,
        answer_cfg.max_input_tokens,
    )
    stage_b_output = backend.generate(answer_handle, stage_b_input, answer_cfg.max_output_tokens)
    stage_b = parse_output(stage_b_output, TaskKind.ANSWER_GIVEN_EXPLANATION)
    return replace(stage_b, explanation_text=explanation)


def _build_pairs(
    split_corpus: Corpus,
    store: ExplanationStore | None,
    spec: ExperimentSpec,
    cfg: TrainConfig,
) -> tuple[list[Pair], int]:
    pairs: list[Pair] = []
    skipped = 0
    for record in split_corpus:
        if spec.task is TaskKind.ANSWER_AND_EXPLANATION and not record.explanation:
            skipped += 1
            continue
        explanation = store.get(record.id) if store is not None else None
        source = build_input(
            record, spec.task, spec.use_captions, explanation, cfg.max_input_tokens
        )
        pairs.append((source, build_target(record, spec.task)))
    return pairs, skipped


def _infer_split(
    backend: Seq2SeqBackend,
    handle: ModelHandle,
    split_corpus: Corpus,
    store: ExplanationStore | None,
    spec: ExperimentSpec,
    cfg: TrainConfig,
) -> tuple[list[PredictionRow], list[str]]:
    rows: list[PredictionRow] = []
    inputs: list[str] = []
    for record in split_corpus:
        explanation_in = store.get(record.id) if store is not None else None
        source = build_input(
            record, spec.task, spec.use_captions, explanation_in, cfg.max_input_tokens
        )
        output = backend.generate(handle, source, cfg.max_output_tokens)
        parsed = parse_output(output, spec.task)
        if spec.task is TaskKind.ANSWER_GIVEN_EXPLANATION:
            parsed = replace(parsed, explanation_text=explanation_in)
        matched = match_answer(parsed.answer_text, record)
        consistent = None
        if record.is_multiple_choice and parsed.explanation_text is not None:
            consistent = consistency_check(parsed, record)
        rows.append(
            PredictionRow(
                record_id=record.id,
                raw_output=output,
                answer_text=parsed.answer_text,
                explanation_text=parsed.explanation_text,
                matched=matched,
                consistent=consistent,
                parse_ok=parsed.parse_ok,
            )
        )
        inputs.append(source)
    return rows, inputs


def write_spec_snapshot(spec: ExperimentSpec, path: str | Path) -> None:
    obj = {
        "id": spec.id,
        "task": spec.task.name,
        "use_captions": spec.use_captions,
        "init_from": spec.init_from,
        "explanation_provider": spec.explanation_provider,
    }
    Path(path).write_text(
        json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def read_spec_snapshot(path: str | Path) -> ExperimentSpec:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExperimentSpec(
        id=obj["id"],
        task=TaskKind[obj["task"]],
        use_captions=obj["use_captions"],
        init_from=obj.get("init_from"),
        explanation_provider=obj.get("explanation_provider"),
    )


def run_experiment(
    spec: ExperimentSpec,
    corpus: Corpus,
    config: TrainConfig,
    backend: Seq2SeqBackend,
    registry: Registry,
    out_dir: str | Path,
    explanation_cache: dict[tuple[str, Split], ExplanationStore] | None = None,
) -> ExperimentArtifacts:
    """Train, infer, evaluate, and persist one experiment.

    All dependencies must already be in the registry. Backend failures
    propagate as :class:`ExperimentError` with the experiment id attached.
    """
    for dep in spec.dependencies():
        if dep not in registry:
            raise ExperimentError(f"{spec.id}: missing dependency {dep!r}")
    cfg = resolved_config(config, spec.task)
    split_corpora = {
        split: select_split(corpus, split) for split in (Split.TRAIN, Split.VALIDATION)
    }

    stores: dict[Split, ExplanationStore] = {}
    if spec.task is TaskKind.ANSWER_GIVEN_EXPLANATION:
        provider = registry[spec.explanation_provider]
        if provider.spec.task is not TaskKind.ANSWER_AND_EXPLANATION:
            raise ExperimentError(
                f"{spec.id}: provider {provider.spec.id!r} does not generate explanations"
            )
        for split, split_corpus in split_corpora.items():
            if not len(split_corpus):
                continue
            cache_key = (provider.spec.id, split)
            if explanation_cache is not None and cache_key in explanation_cache:
                stores[split] = explanation_cache[cache_key]
                continue
            try:
                stores[split] = generate_explanations(
                    backend, provider.spec, provider.handle, split_corpus, config
                )
            except BackendError as exc:
                raise ExperimentError(f"{spec.id}: {exc}") from exc
            if explanation_cache is not None:
                explanation_cache[cache_key] = stores[split]

    train_pairs, skipped_train = _build_pairs(
        split_corpora[Split.TRAIN], stores.get(Split.TRAIN), spec, cfg
    )
    val_pairs, skipped_val = _build_pairs(
        split_corpora[Split.VALIDATION], stores.get(Split.VALIDATION), spec, cfg
    )
    if skipped_train or skipped_val:
        log.warning(
            "%s: skipped %d train / %d validation record(s) lacking gold explanations",
            spec.id,
            skipped_train,
            skipped_val,
        )

    try:
        init = None
        if spec.init_from is not None:
            init = backend.load_checkpoint(registry[spec.init_from].checkpoint_dir)
        handle, trace = backend.fit(train_pairs, val_pairs, cfg, init)
    except BackendError as exc:
        raise ExperimentError(f"{spec.id}: {exc}") from exc

    experiment_dir = Path(out_dir) / spec.id
    experiment_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = experiment_dir / "checkpoint"
    extra_metadata: dict[str, str] = {"experiment_id": spec.id}
    if spec.init_from is not None:
        extra_metadata["init_from"] = spec.init_from
    backend.save_checkpoint(handle, checkpoint_dir, extra_metadata)

    reports: dict[Split, EvalReport] = {}
    predictions: dict[Split, tuple[PredictionRow, ...]] = {}
    inference_inputs: dict[Split, tuple[str, ...]] = {}
    for split, split_corpus in split_corpora.items():
        if not len(split_corpus):
            continue
        try:
            rows, inputs = _infer_split(
                backend, handle, split_corpus, stores.get(split), spec, cfg
            )
        except BackendError as exc:
            raise ExperimentError(f"{spec.id}: {exc}") from exc
        report = evaluate(rows, split_corpus, spec.task, experiment_id=spec.id, split=split)
        reports[split] = report
        predictions[split] = tuple(rows)
        inference_inputs[split] = tuple(inputs)
        write_predictions(rows, experiment_dir / f"predictions_{split.value}.jsonl")
        (experiment_dir / f"report_{split.value}.txt").write_text(
            render_report(report), encoding="utf-8"
        )

    write_spec_snapshot(spec, experiment_dir / "spec.json")
    (experiment_dir / "train_config.json").write_text(
        json.dumps(cfg.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    emit_loss_curves(trace, experiment_dir / "losses.csv")

    return ExperimentArtifacts(
        spec=spec,
        handle=handle,
        trace=trace,
        reports=reports,
        checkpoint_dir=checkpoint_dir,
        train_pairs=tuple(train_pairs),
        val_pairs=tuple(val_pairs),
        inference_inputs=inference_inputs,
        predictions=predictions,
        explanation_stores=stores,
    )


def run_plan(
    specs: Sequence[ExperimentSpec],
    corpus: Corpus,
    config: TrainConfig,
    backend: Seq2SeqBackend,
    out_dir: str | Path,
) -> Registry:
    """Run a set of experiments in dependency order; returns the registry."""
    plan = resolve_order(specs)
    registry: Registry = {}
    explanation_cache: dict[tuple[str, Split], ExplanationStore] = {}
    for spec in plan:
        registry[spec.id] = run_experiment(
            spec, corpus, config, backend, registry, out_dir, explanation_cache
        )
    return registry
