"""Prompt compilation and output parsing.

The template grammar is normative:

* A model input is the space-joined concatenation of labeled segments in the
  fixed order ``question:``, ``choices:``, ``context:``, ``hint:``,
  ``caption:``, ``explanation:``. Labels are lowercase ASCII followed by a
  colon and a single space; a segment whose field is absent is omitted
  entirely. Choices are enumerated ``(a) ``, ``(b) ``, ...
* The ``caption:`` segment appears only when captions are enabled and the
  record has one. The ``explanation:`` segment appears only for the
  answer-given-explanation task and may carry empty content.
* Targets are the gold answer verbatim, or for the joint task the string
  ``answer: {gold} explanation: {gold explanation}``.

When a token budget is given, over-long inputs are trimmed from the right of
the ``lecture:``, ``context:``, then ``hint:`` segments (in that order);
question, choices, caption, and explanation content is never truncated.
Tokens are whitespace-separated words, matching the mock backend's unit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .corpus import QARecord, canonical_gold
from .errors import PromptError
from .textnorm import normalize_text

__all__ = [
    "TaskKind",
    "ParsedOutput",
    "normalize_text",
    "build_input",
    "build_target",
    "parse_output",
    "match_answer",
]

ANSWER_LABEL = "answer:"
EXPLANATION_LABEL = "explanation:"

_SEGMENT_ORDER = ("question", "choices", "context", "hint", "caption", "explanation")
_TRUNCATION_PRIORITY = ("lecture", "context", "hint")


class TaskKind(Enum):
    """What the model is asked to generate."""

    ANSWER = "answer"
    ANSWER_AND_EXPLANATION = "answer_and_explanation"
    ANSWER_GIVEN_EXPLANATION = "answer_given_explanation"


@dataclass(frozen=True)
class ParsedOutput:
    """A generated string split into its answer and optional explanation.

    ``parse_ok`` is False only when the fallback rule fired (an expected
    ``explanation:`` label was missing).
    """

    answer_text: str
    explanation_text: str | None
    parse_ok: bool


def _choice_line(choices: tuple[str, ...]) -> str:
    return " ".join(f"({chr(ord('a') + i)}) {c}" for i, c in enumerate(choices))


def _segment_text(label: str, content: str) -> str:
    return f"{label}: {content}".rstrip()


def _token_count(segments: list[tuple[str, str]]) -> int:
    # each label is one whitespace token; empty content contributes none
    return sum(1 + len(content.split()) for _, content in segments)


def _trim_to_budget(segments: list[tuple[str, str]], max_tokens: int) -> list[tuple[str, str]]:
    for label in _TRUNCATION_PRIORITY:
        if _token_count(segments) <= max_tokens:
            break
        index = next((i for i, (name, _) in enumerate(segments) if name == label), None)
        if index is None:
            continue
        words = segments[index][1].split()
        while words and _token_count(segments) > max_tokens:
            words.pop()
            segments[index] = (label, " ".join(words))
        if not words:
            del segments[index]
    return segments


def build_input(
    record: QARecord,
    task: TaskKind,
    use_captions: bool,
    explanation: str | None = None,
    max_tokens: int | None = None,
) -> str:
    """Compile a record into the model input string for one task variant."""
    if task is TaskKind.ANSWER_GIVEN_EXPLANATION and explanation is None:
        raise PromptError(
            f"record {record.id!r}: answer-given-explanation input requires an explanation"
        )
    segments: list[tuple[str, str]] = [("question", record.question)]
    if record.choices:
        segments.append(("choices", _choice_line(record.choices)))
    if record.context:
        segments.append(("context", record.context))
    if record.hint:
        segments.append(("hint", record.hint))
    if use_captions and record.caption:
        segments.append(("caption", record.caption))
    if task is TaskKind.ANSWER_GIVEN_EXPLANATION:
        segments.append(("explanation", explanation or ""))
    if max_tokens is not None:
        segments = _trim_to_budget(segments, max_tokens)
    return " ".join(_segment_text(label, content) for label, content in segments)


def build_target(record: QARecord, task: TaskKind) -> str:
    """Compile a record into the training target string for one task variant."""
    gold = record.gold_answer()
    if task is TaskKind.ANSWER_AND_EXPLANATION:
        if not record.explanation:
            raise PromptError(
                f"record {record.id!r}: joint answer/explanation target requires a gold explanation"
            )
        return f"{ANSWER_LABEL} {gold} {EXPLANATION_LABEL} {record.explanation}"
    return gold


def parse_output(text: str, task: TaskKind) -> ParsedOutput:
    """Split a generated string back into answer and explanation. Never raises.

    For answer-only tasks the whole trimmed text is the answer. For the joint
    task the text is split on the first ``explanation:`` label and a leading
    ``answer:`` label is stripped; if the label is missing, the whole text
    becomes the answer with ``parse_ok=False``.
    """
    if task is not TaskKind.ANSWER_AND_EXPLANATION:
        return ParsedOutput(answer_text=text.strip(), explanation_text=None, parse_ok=True)
    if EXPLANATION_LABEL in text:
        before, after = text.split(EXPLANATION_LABEL, 1)
        answer = before.strip()
        if answer.startswith(ANSWER_LABEL):
            answer = answer[len(ANSWER_LABEL):].strip()
        return ParsedOutput(answer_text=answer, explanation_text=after.strip(), parse_ok=True)
    return ParsedOutput(answer_text=text.strip(), explanation_text="", parse_ok=False)


def match_answer(generated: str, record: QARecord) -> int | bool | None:
    """Match a generated answer against the record's gold.

    Multiple-choice: the index of the choice equal to the generation after
    normalization, else the single choice related to it by substring
    containment (either direction), else None. Open-ended: True iff the
    normalized generation equals the canonical gold answer.
    """
    generated_norm = normalize_text(generated)
    if not record.is_multiple_choice:
        assert record.gold_answers is not None
        return generated_norm == canonical_gold(record.gold_answers)
    normalized = [normalize_text(c) for c in record.choices]
    for i, choice_norm in enumerate(normalized):
        if generated_norm and generated_norm == choice_norm:
            return i
    if not generated_norm:
        return None
    hits = [
        i
        for i, choice_norm in enumerate(normalized)
        if choice_norm and (choice_norm in generated_norm or generated_norm in choice_norm)
    ]
    return hits[0] if len(hits) == 1 else None
