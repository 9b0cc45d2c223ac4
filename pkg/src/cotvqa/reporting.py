"""Results-table and loss-curve emission.

The results table has one row per experiment in id order with the columns
Model, Generation Task, Train Accuracy, Validation Accuracy, Rouge-1 F1,
Rouge-2 F1, Rouge-L F1. Accuracies render as percentages with two decimals,
ROUGE F1 with three decimals, absent values as ``-``. Tables are emitted
both as aligned text and as CSV; all outputs are UTF-8 with a trailing
newline.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .backend import TrainingTrace
from .errors import CotvqaError
from .metrics import EvalReport, format_percent, format_score
from .corpus import Split
from .prompts import TaskKind

TABLE_COLUMNS = (
    "Model",
    "Generation Task",
    "Train Accuracy",
    "Validation Accuracy",
    "Rouge-1 F1",
    "Rouge-2 F1",
    "Rouge-L F1",
)

TASK_DISPLAY = {
    TaskKind.ANSWER: "Answer",
    TaskKind.ANSWER_AND_EXPLANATION: "Answer, Explanation",
    TaskKind.ANSWER_GIVEN_EXPLANATION: "Answer (Input Explanation)",
}

_BUILTIN_ID = re.compile(r"^model(\d+)$")


@dataclass(frozen=True)
class ResultsRow:
    """One rendered table row; None fields display as ``-``."""

    model: str
    generation_task: str
    train_accuracy: float | None
    validation_accuracy: float | None
    rouge1_f1: float | None
    rouge2_f1: float | None
    rougeL_f1: float | None

    def cells(self) -> tuple[str, ...]:
        def pct(value: float | None) -> str:
            return format_percent(value) if value is not None else "-"

        def score(value: float | None) -> str:
            return format_score(value) if value is not None else "-"

        return (
            self.model,
            self.generation_task,
            pct(self.train_accuracy),
            pct(self.validation_accuracy),
            score(self.rouge1_f1),
            score(self.rouge2_f1),
            score(self.rougeL_f1),
        )


def display_model_name(experiment_id: str) -> str:
    match = _BUILTIN_ID.match(experiment_id)
    return f"Model {match.group(1)}" if match else experiment_id


def build_results_rows(
    entries: Iterable[tuple[str, TaskKind, Mapping[Split, EvalReport]]],
) -> list[ResultsRow]:
    """Turn (experiment id, task, reports-by-split) entries into table rows.

    Rows sort by experiment id. At most one train and one validation report
    per experiment; ROUGE columns come from the validation report when
    present, else from the train report.
    """
    rows = []
    seen: set[str] = set()
    for experiment_id, task, reports in sorted(entries, key=lambda e: e[0]):
        if experiment_id in seen:
            raise CotvqaError(f"duplicate reports for experiment {experiment_id!r}")
        seen.add(experiment_id)
        for split in reports:
            if Split(split) not in (Split.TRAIN, Split.VALIDATION):
                raise CotvqaError(
                    f"experiment {experiment_id!r}: unexpected report split {split!r}"
                )
        train = reports.get(Split.TRAIN)
        validation = reports.get(Split.VALIDATION)
        rouge_source = validation if validation is not None else train
        rows.append(
            ResultsRow(
                model=display_model_name(experiment_id),
                generation_task=TASK_DISPLAY[task],
                train_accuracy=train.accuracy if train else None,
                validation_accuracy=validation.accuracy if validation else None,
                rouge1_f1=(
                    rouge_source.rouge1.f1 if rouge_source and rouge_source.rouge1 else None
                ),
                rouge2_f1=(
                    rouge_source.rouge2.f1 if rouge_source and rouge_source.rouge2 else None
                ),
                rougeL_f1=(
                    rouge_source.rougeL.f1 if rouge_source and rouge_source.rougeL else None
                ),
            )
        )
    return rows


def render_results_table(rows: Iterable[ResultsRow]) -> str:
    """Aligned text table, header included, trailing newline."""
    grid = [TABLE_COLUMNS, *(row.cells() for row in rows)]
    widths = [max(len(line[i]) for line in grid) for i in range(len(TABLE_COLUMNS))]
    rendered = []
    for line in grid:
        rendered.append("  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip())
    return "\n".join(rendered) + "\n"


def results_table_csv(rows: Iterable[ResultsRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in rows:
        writer.writerow(row.cells())
    return buffer.getvalue()


def emit_results_table(
    rows: Iterable[ResultsRow], text_path: str | Path, csv_path: str | Path
) -> str:
    """Write the aligned-text and CSV tables; returns the text rendering."""
    rows = list(rows)
    text = render_results_table(rows)
    Path(text_path).write_text(text, encoding="utf-8")
    Path(csv_path).write_text(results_table_csv(rows), encoding="utf-8")
    return text


def emit_loss_curves(trace: TrainingTrace, path: str | Path) -> None:
    """Write per-epoch losses as CSV with header ``epoch,train_loss,val_loss``."""
    lines = ["epoch,train_loss,val_loss"]
    for epoch, (train, val) in enumerate(zip(trace.train_loss, trace.val_loss), start=1):
        lines.append(f"{epoch},{train},{val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_losses_csv(path: str | Path) -> TrainingTrace:
    """Inverse of :func:`emit_loss_curves`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "epoch,train_loss,val_loss":
        raise CotvqaError(f"{path}: not a loss CSV (bad or missing header)")
    train: list[float] = []
    val: list[float] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise CotvqaError(f"{path}: malformed loss row {line!r}")
        train.append(float(parts[1]))
        val.append(float(parts[2]))
    return TrainingTrace(train_loss=tuple(train), val_loss=tuple(val))
