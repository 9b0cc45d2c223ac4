"""Exact-match accuracy and ROUGE-1/2/L, computed from scratch.

Tokenization for every metric is :func:`normalize_text` followed by a
whitespace split; there is no stemming or stopword removal. F-measures use
beta = 1. Corpus-level ROUGE is the arithmetic mean of per-record scores.
An empty candidate or reference yields 0 for its ratio rather than an error.

Report files are flat ``key: value`` text: rates render as percentages with
two decimals, ROUGE components with three decimals, absent fields as ``-``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, QARecord, Split
from .prompts import TaskKind
from .textnorm import normalize_text

_EPS = 1e-9


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    def __post_init__(self) -> None:
        for name in ("precision", "recall", "f1"):
            value = getattr(self, name)
            if not -_EPS <= value <= 1 + _EPS:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "RougeScore":
        if precision + recall == 0:
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        return cls(precision=precision, recall=recall, f1=f1)


def _tokens(text: str) -> list[str]:
    return normalize_text(text).split()


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    candidate_grams = _ngram_counts(_tokens(candidate), n)
    reference_grams = _ngram_counts(_tokens(reference), n)
    overlap = sum(min(count, reference_grams[gram]) for gram, count in candidate_grams.items())
    candidate_total = sum(candidate_grams.values())
    reference_total = sum(reference_grams.values())
    precision = overlap / candidate_total if candidate_total else 0.0
    recall = overlap / reference_total if reference_total else 0.0
    return RougeScore.from_pr(precision, recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for token in a:
        previous = 0
        for j, other in enumerate(b, start=1):
            current = row[j]
            if token == other:
                row[j] = previous + 1
            elif row[j - 1] > row[j]:
                row[j] = row[j - 1]
            previous = current
    return row[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """Longest-common-subsequence precision/recall/F1 over tokens."""
    candidate_tokens = _tokens(candidate)
    reference_tokens = _tokens(reference)
    lcs = _lcs_length(candidate_tokens, reference_tokens)
    precision = lcs / len(candidate_tokens) if candidate_tokens else 0.0
    recall = lcs / len(reference_tokens) if reference_tokens else 0.0
    return RougeScore.from_pr(precision, recall)


def is_correct(match: int | bool | None, record: QARecord) -> bool:
    """Whether one match result counts as a correct prediction."""
    if record.is_multiple_choice:
        return (
            isinstance(match, int)
            and not isinstance(match, bool)
            and match == record.answer_index
        )
    return match is True


def accuracy(matches: Sequence[int | bool | None], corpus: Corpus) -> float:
    """Fraction of records whose match result hits the gold; no-match counts as wrong."""
    if len(matches) != len(corpus):
        raise ValueError(
            f"got {len(matches)} match results for {len(corpus)} records"
        )
    if len(corpus) == 0:
        raise ValueError("accuracy over an empty corpus is undefined")
    hits = sum(1 for match, record in zip(matches, corpus) if is_correct(match, record))
    return hits / len(corpus)


@dataclass(frozen=True)
class PredictionRow:
    """One generated output with its parsed fields and per-record flags."""

    record_id: str
    raw_output: str
    answer_text: str
    explanation_text: str | None
    matched: int | bool | None
    consistent: bool | None
    parse_ok: bool


def write_predictions(rows: Sequence[PredictionRow], path: str | Path) -> None:
    lines = [
        json.dumps(
            {
                "id": row.record_id,
                "raw_output": row.raw_output,
                "answer": row.answer_text,
                "explanation": row.explanation_text,
                "matched": row.matched,
                "consistent": row.consistent,
                "parse_ok": row.parse_ok,
            },
            ensure_ascii=False,
        )
        for row in rows
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_predictions(path: str | Path) -> list[PredictionRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        rows.append(
            PredictionRow(
                record_id=obj["id"],
                raw_output=obj["raw_output"],
                answer_text=obj["answer"],
                explanation_text=obj["explanation"],
                matched=obj["matched"],
                consistent=obj["consistent"],
                parse_ok=obj["parse_ok"],
            )
        )
    return rows


@dataclass(frozen=True)
class EvalReport:
    """Per-experiment, per-split aggregate metrics."""

    experiment_id: str
    split: Split
    n_records: int
    accuracy: float
    rouge1: RougeScore | None = None
    rouge2: RougeScore | None = None
    rougeL: RougeScore | None = None
    n_rouge_records: int | None = None
    consistency_rate: float | None = None
    parse_failure_rate: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.split, Split):
            object.__setattr__(self, "split", Split(self.split))
        if self.n_records < 0:
            raise ValueError("n_records must be >= 0")
        for name in ("accuracy", "consistency_rate", "parse_failure_rate"):
            value = getattr(self, name)
            if value is not None and not -_EPS <= value <= 1 + _EPS:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _mean_scores(scores: Sequence[RougeScore]) -> RougeScore:
    return RougeScore(
        precision=_mean([s.precision for s in scores]),
        recall=_mean([s.recall for s in scores]),
        f1=_mean([s.f1 for s in scores]),
    )


def evaluate(
    rows: Sequence[PredictionRow],
    corpus: Corpus,
    task: TaskKind,
    *,
    experiment_id: str,
    split: Split | str,
) -> EvalReport:
    """Aggregate per-record predictions into an :class:`EvalReport`.

    Rows align with the corpus by record id. ROUGE is computed against gold
    explanations only for the joint answer/explanation task; records without
    a gold explanation are excluded from ROUGE and counted.
    """
    if len(corpus) == 0:
        raise ValueError("cannot evaluate an empty corpus")
    by_id: dict[str, PredictionRow] = {}
    for row in rows:
        if row.record_id in by_id:
            raise ValueError(f"duplicate prediction for record id {row.record_id!r}")
        by_id[row.record_id] = row
    corpus_ids = {record.id for record in corpus}
    missing = [record.id for record in corpus if record.id not in by_id]
    if missing:
        raise ValueError(f"missing prediction(s) for record id(s): {', '.join(missing)}")
    extra = [row.record_id for row in rows if row.record_id not in corpus_ids]
    if extra:
        raise ValueError(f"prediction(s) for unknown record id(s): {', '.join(extra)}")

    ordered = [(by_id[record.id], record) for record in corpus]
    overall_accuracy = accuracy([row.matched for row, _ in ordered], corpus)

    rouge1 = rouge2 = rougel = None
    n_rouge_records = None
    if task is TaskKind.ANSWER_AND_EXPLANATION:
        scored = [(row, record) for row, record in ordered if record.explanation]
        n_rouge_records = len(scored)
        if scored:
            generated = [(row.explanation_text or "", record.explanation) for row, record in scored]
            rouge1 = _mean_scores([rouge_n(c, r, 1) for c, r in generated])
            rouge2 = _mean_scores([rouge_n(c, r, 2) for c, r in generated])
            rougel = _mean_scores([rouge_l(c, r) for c, r in generated])

    consistency_values = [row.consistent for row, _ in ordered if row.consistent is not None]
    consistency_rate = (
        _mean([1.0 if value else 0.0 for value in consistency_values])
        if consistency_values
        else None
    )
    parse_failure_rate = _mean([0.0 if row.parse_ok else 1.0 for row, _ in ordered])

    return EvalReport(
        experiment_id=experiment_id,
        split=Split(split),
        n_records=len(corpus),
        accuracy=overall_accuracy,
        rouge1=rouge1,
        rouge2=rouge2,
        rougeL=rougel,
        n_rouge_records=n_rouge_records,
        consistency_rate=consistency_rate,
        parse_failure_rate=parse_failure_rate,
    )


def format_percent(value: float) -> str:
    return f"{value * 100:.2f}%"


def format_score(value: float) -> str:
    return f"{value:.3f}"


def render_report(report: EvalReport) -> str:
    """Serialize a report as flat key/value text (deterministic, newline-terminated)."""

    def pct(value: float | None) -> str:
        return format_percent(value) if value is not None else "-"

    def score(value: float | None) -> str:
        return format_score(value) if value is not None else "-"

    lines = [
        f"experiment_id: {report.experiment_id}",
        f"split: {report.split.value}",
        f"n_records: {report.n_records}",
        f"accuracy: {pct(report.accuracy)}",
    ]
    for name, rouge in (("rouge1", report.rouge1), ("rouge2", report.rouge2), ("rougeL", report.rougeL)):
        lines.append(f"{name}_precision: {score(rouge.precision if rouge else None)}")
        lines.append(f"{name}_recall: {score(rouge.recall if rouge else None)}")
        lines.append(f"{name}_f1: {score(rouge.f1 if rouge else None)}")
    lines.append(
        f"n_rouge_records: {report.n_rouge_records if report.n_rouge_records is not None else '-'}"
    )
    lines.append(f"consistency_rate: {pct(report.consistency_rate)}")
    lines.append(f"parse_failure_rate: {pct(report.parse_failure_rate)}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    """Inverse of :func:`render_report` (up to the serialized precision)."""
    values: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"malformed report line: {line!r}")
        values[key.strip()] = value.strip()

    def pct(key: str) -> float | None:
        raw = values[key]
        if raw == "-":
            return None
        return float(raw.rstrip("%")) / 100

    def rouge(prefix: str) -> RougeScore | None:
        raw = values[f"{prefix}_f1"]
        if raw == "-":
            return None
        return RougeScore(
            precision=float(values[f"{prefix}_precision"]),
            recall=float(values[f"{prefix}_recall"]),
            f1=float(raw),
        )

    n_rouge_raw = values["n_rouge_records"]
    accuracy_value = pct("accuracy")
    if accuracy_value is None:
        raise ValueError("report is missing an accuracy value")
    parse_failure = pct("parse_failure_rate")
    return EvalReport(
        experiment_id=values["experiment_id"],
        split=Split(values["split"]),
        n_records=int(values["n_records"]),
        accuracy=accuracy_value,
        rouge1=rouge("rouge1"),
        rouge2=rouge("rouge2"),
        rougeL=rouge("rougeL"),
        n_rouge_records=None if n_rouge_raw == "-" else int(n_rouge_raw),
        consistency_rate=pct("consistency_rate"),
        parse_failure_rate=parse_failure if parse_failure is not None else 0.0,
    )
