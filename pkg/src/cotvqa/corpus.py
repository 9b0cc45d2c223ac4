"""Dataset loading, validation, and caption augmentation.

Two line-oriented input formats are supported, one JSON object per line:

* scienceqa: keys ``id``, ``question``, ``choices`` (array), ``answer``
  (integer index), ``hint``, ``lecture``, ``solution``, ``image_id``,
  ``split``, ``subject``. Absent keys mean absent fields.
* textvqa: keys ``id``, ``question``, ``answers`` (array of annotator
  strings), ``image_id``, ``split``.

Both loaders also accept an optional ``caption`` key so that corpora written
by :func:`write_corpus` after caption attachment round-trip.

Caption files hold one ``image_id<TAB>caption`` entry per line, UTF-8.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Sequence

from .errors import CorpusError
from .textnorm import normalize_text

log = logging.getLogger(__name__)


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


def canonical_gold(answers: Sequence[str]) -> str:
    """Canonical answer for an open-ended record.

    The most frequent answer after normalization; ties break to the
    lexicographically smallest normalized form.
    """
    if not answers:
        raise CorpusError("cannot derive a canonical answer from an empty answer list")
    counts = Counter(normalize_text(a) for a in answers)
    top = max(counts.values())
    return min(text for text, n in counts.items() if n == top)


@dataclass(frozen=True)
class QARecord:
    """One question with its gold answer(s) and optional supporting text.

    Exactly one of ``answer_index`` (multiple-choice) and ``gold_answers``
    (open-ended) is set. A caption may only be present when ``image_id`` is.
    """

    id: str
    question: str
    choices: tuple[str, ...] = ()
    answer_index: int | None = None
    gold_answers: tuple[str, ...] | None = None
    context: str | None = None
    hint: str | None = None
    lecture: str | None = None
    explanation: str | None = None
    image_id: str | None = None
    caption: str | None = None
    split: Split = Split.TRAIN
    subject: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))
        if self.gold_answers is not None:
            object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        if not isinstance(self.split, Split):
            try:
                object.__setattr__(self, "split", Split(self.split))
            except ValueError:
                raise CorpusError(f"record {self.id!r}: unknown split {self.split!r}") from None
        self._validate()

    def _validate(self) -> None:
        if not self.id:
            raise CorpusError("record id must be a non-empty string")
        if not self.question:
            raise CorpusError(f"record {self.id!r}: question must be non-empty")
        if (self.answer_index is None) == (self.gold_answers is None):
            raise CorpusError(
                f"record {self.id!r}: exactly one of answer_index and gold_answers must be set"
            )
        if self.answer_index is not None:
            if isinstance(self.answer_index, bool) or not isinstance(self.answer_index, int):
                raise CorpusError(f"record {self.id!r}: answer_index must be an integer")
            if len(self.choices) < 2:
                raise CorpusError(
                    f"record {self.id!r}: multiple-choice records need at least 2 choices"
                )
            if not 0 <= self.answer_index < len(self.choices):
                raise CorpusError(
                    f"record {self.id!r}: answer_index {self.answer_index} out of range "
                    f"for {len(self.choices)} choices"
                )
        if self.gold_answers is not None:
            if not self.gold_answers or any(not a for a in self.gold_answers):
                raise CorpusError(
                    f"record {self.id!r}: gold_answers must be a non-empty list of non-empty strings"
                )
        if self.caption is not None and self.image_id is None:
            raise CorpusError(f"record {self.id!r}: caption present without an image_id")

    @property
    def is_multiple_choice(self) -> bool:
        return self.answer_index is not None

    def gold_answer(self) -> str:
        """Gold answer text: the indexed choice verbatim, or the canonical open-ended answer."""
        if self.answer_index is not None:
            return self.choices[self.answer_index]
        assert self.gold_answers is not None
        return canonical_gold(self.gold_answers)


@dataclass(frozen=True)
class CaptionMap:
    """Mapping from image id to a non-empty caption string."""

    entries: dict[str, str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", dict(self.entries))
        for image_id, caption in self.entries.items():
            if not image_id:
                raise CorpusError("caption map contains an empty image id")
            if not caption:
                raise CorpusError(f"caption for image id {image_id!r} is empty")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Corpus:
    """An immutable, ordered collection of validated records."""

    records: tuple[QARecord, ...]
    provenance: str
    schema: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if self.schema not in ("scienceqa", "textvqa"):
            raise CorpusError(f"unknown corpus schema {self.schema!r}")
        seen: set[str] = set()
        for record in self.records:
            if record.id in seen:
                raise CorpusError(f"duplicate record id {record.id!r}")
            seen.add(record.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[QARecord]:
        return iter(self.records)

    def by_id(self, record_id: str) -> QARecord:
        for record in self.records:
            if record.id == record_id:
                return record
        raise CorpusError(f"no record with id {record_id!r}")


def _require_keys(obj: dict[str, Any], keys: Sequence[str]) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise CorpusError(f"missing key(s): {', '.join(missing)}")


def _scienceqa_record(obj: dict[str, Any]) -> QARecord:
    _require_keys(obj, ("id", "question", "choices", "answer", "split"))
    if not isinstance(obj["choices"], list):
        raise CorpusError("choices must be an array")
    answer = obj["answer"]
    if isinstance(answer, bool) or not isinstance(answer, int):
        raise CorpusError("answer must be an integer index")
    return QARecord(
        id=str(obj["id"]),
        question=obj["question"],
        choices=tuple(str(c) for c in obj["choices"]),
        answer_index=answer,
        hint=obj.get("hint"),
        lecture=obj.get("lecture"),
        explanation=obj.get("solution"),
        image_id=obj.get("image_id"),
        caption=obj.get("caption"),
        split=obj["split"],
        subject=obj.get("subject"),
    )


def _textvqa_record(obj: dict[str, Any]) -> QARecord:
    _require_keys(obj, ("id", "question", "answers", "split"))
    if not isinstance(obj["answers"], list):
        raise CorpusError("answers must be an array of strings")
    return QARecord(
        id=str(obj["id"]),
        question=obj["question"],
        gold_answers=tuple(str(a) for a in obj["answers"]),
        image_id=obj.get("image_id"),
        caption=obj.get("caption"),
        split=obj["split"],
    )


def _load_line_file(path: str | Path, schema: str, strict: bool) -> Corpus:
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {source}: {exc}") from exc
    builder = _scienceqa_record if schema == "scienceqa" else _textvqa_record
    records: list[QARecord] = []
    dropped = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise CorpusError("record is not a JSON object")
            records.append(builder(obj))
        except (json.JSONDecodeError, CorpusError) as exc:
            if strict:
                raise CorpusError(f"{source}:{lineno}: {exc}") from exc
            dropped += 1
    if dropped:
        log.warning("%s: dropped %d invalid record(s) in lenient mode", source, dropped)
    return Corpus(records=tuple(records), provenance=str(source), schema=schema)


def load_scienceqa(path: str | Path, strict: bool = True) -> Corpus:
    """Load a multiple-choice corpus from the scienceqa line format.

    In strict mode any malformed line or invariant violation raises a
    :class:`CorpusError` naming the line; in lenient mode invalid records
    are dropped and counted in a warning.
    """
    return _load_line_file(path, "scienceqa", strict)


def load_textvqa(path: str | Path, strict: bool = True) -> Corpus:
    """Load an open-ended corpus from the textvqa line format."""
    return _load_line_file(path, "textvqa", strict)


def load_caption_file(path: str | Path) -> CaptionMap:
    """Load tab-separated ``image_id<TAB>caption`` entries."""
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {source}: {exc}") from exc
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{source}:{lineno}: expected image_id<TAB>caption")
        image_id, caption = parts
        if image_id in entries:
            raise CorpusError(f"{source}:{lineno}: duplicate image id {image_id!r}")
        if not caption:
            raise CorpusError(f"{source}:{lineno}: empty caption for image id {image_id!r}")
        entries[image_id] = caption
    return CaptionMap(entries=entries)


def attach_captions(corpus: Corpus, captions: CaptionMap, strict: bool = False) -> Corpus:
    """Return a new corpus with captions attached to matching records.

    Records whose ``image_id`` appears in the map gain that caption verbatim;
    all other fields and the record order are untouched. In strict mode,
    caption entries that match no record and records with an image but no
    caption entry both raise.
    """
    if strict:
        known = {r.image_id for r in corpus if r.image_id}
        unknown = sorted(set(captions.entries) - known)
        if unknown:
            raise CorpusError(f"captions reference unknown image id(s): {', '.join(unknown)}")
        uncaptioned = sorted(
            {r.image_id for r in corpus if r.image_id and r.image_id not in captions.entries}
        )
        if uncaptioned:
            raise CorpusError(f"no caption entry for image id(s): {', '.join(uncaptioned)}")
    updated = tuple(
        replace(r, caption=captions.entries[r.image_id])
        if r.image_id and r.image_id in captions.entries
        else r
        for r in corpus
    )
    return replace(corpus, records=updated)


def select_split(corpus: Corpus, split: Split | str) -> Corpus:
    """Return the records belonging to one split, order preserved."""
    split = Split(split)
    return replace(corpus, records=tuple(r for r in corpus if r.split is split))


def _record_to_obj(record: QARecord, schema: str) -> dict[str, Any]:
    obj: dict[str, Any] = {"id": record.id, "question": record.question}
    if schema == "scienceqa":
        obj["choices"] = list(record.choices)
        obj["answer"] = record.answer_index
        optional = (
            ("hint", record.hint),
            ("lecture", record.lecture),
            ("solution", record.explanation),
            ("image_id", record.image_id),
            ("caption", record.caption),
            ("subject", record.subject),
        )
    else:
        obj["answers"] = list(record.gold_answers or ())
        optional = (("image_id", record.image_id), ("caption", record.caption))
    for key, value in optional:
        if value is not None:
            obj[key] = value
    obj["split"] = record.split.value
    return obj


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Persist a corpus in its line format (UTF-8, newline-terminated)."""
    lines = [
        json.dumps(_record_to_obj(r, corpus.schema), ensure_ascii=False) for r in corpus
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
