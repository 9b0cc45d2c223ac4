"""Shared fixtures: deterministic corpora in the supported line formats."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from cotvqa import Corpus, QARecord, attach_captions, load_caption_file, load_scienceqa

SUBJECTS = ("biology", "physics", "geography", "chemistry")

WORDS = (
    "amber",
    "basalt",
    "cedar",
    "delta",
    "ember",
    "fossil",
    "garnet",
    "harbor",
    "iris",
    "jasper",
    "kelp",
    "lumen",
)


def make_organism_record(**overrides) -> QARecord:
    """A small multiple-choice record with a caption, for example-based tests."""
    fields = dict(
        id="organism",
        question="Which is this organism's common name?",
        choices=("crown-of-thorns sea star", "Acanthaster planci"),
        answer_index=0,
        image_id="img_0",
        caption="a blue and white vase sitting on top of a rock",
        explanation="the crown-of-thorns sea star is a starfish that eats coral",
        split="train",
    )
    fields.update(overrides)
    return QARecord(**fields)


def fixture_caption(i: int) -> str:
    return f"a photo of specimen {i} resting on a table"


def make_fixture_records(n: int = 20) -> list[QARecord]:
    """Deterministic multiple-choice records: 12 train / 8 validation,
    all with gold explanations, most with an image id (captions attach
    from the companion caption file)."""
    records = []
    for i in range(n):
        n_choices = 2 + i % 3
        choices = tuple(f"specimen {i} variant {j}" for j in range(n_choices))
        answer = i % n_choices
        records.append(
            QARecord(
                id=f"q{i:02d}",
                question=f"which label fits specimen {i}?",
                choices=choices,
                answer_index=answer,
                hint=f"the field guide lists specimen {i} under section {i % 4}",
                lecture=f"specimens of group {i % 4} share trait {i}" if i % 2 else None,
                explanation=(
                    f"the survey describes specimen {i} as {choices[answer]} in every entry"
                ),
                image_id=f"img_{i:02d}" if i % 5 != 4 else None,
                split="train" if i < 12 else "validation",
                subject=SUBJECTS[i % 4],
            )
        )
    return records


def record_to_line(record: QARecord) -> str:
    obj = {
        "id": record.id,
        "question": record.question,
        "choices": list(record.choices),
        "answer": record.answer_index,
        "split": record.split.value,
    }
    for key, value in (
        ("hint", record.hint),
        ("lecture", record.lecture),
        ("solution", record.explanation),
        ("image_id", record.image_id),
        ("subject", record.subject),
    ):
        if value is not None:
            obj[key] = value
    return json.dumps(obj, ensure_ascii=False)


def write_fixture_dataset(directory: Path, n: int = 20) -> tuple[Path, Path]:
    """Write the records file and its caption file; captions are not inlined."""
    records = make_fixture_records(n)
    records_path = directory / "scienceqa.jsonl"
    records_path.write_text(
        "".join(record_to_line(r) + "\n" for r in records), encoding="utf-8"
    )
    captions_path = directory / "captions.tsv"
    captions_path.write_text(
        "".join(
            f"{r.image_id}\t{fixture_caption(i)}\n"
            for i, r in enumerate(records)
            if r.image_id
        ),
        encoding="utf-8",
    )
    return records_path, captions_path


@pytest.fixture
def fixture_dataset(tmp_path) -> tuple[Path, Path]:
    return write_fixture_dataset(tmp_path)


@pytest.fixture
def fixture_corpus(fixture_dataset) -> Corpus:
    records_path, captions_path = fixture_dataset
    corpus = load_scienceqa(records_path)
    return attach_captions(corpus, load_caption_file(captions_path), strict=True)


def random_record(rng: random.Random, record_id: str) -> QARecord:
    """A randomized record over a colon-free word vocabulary.

    Multiple-choice or open-ended; always carries a gold explanation so any
    task variant applies.
    """

    def phrase(lo: int = 1, hi: int = 4) -> str:
        return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))

    explanation = phrase(3, 8)
    common = dict(
        id=record_id,
        question=f"{phrase(2, 6)} {record_id}",
        explanation=explanation,
        hint=phrase() if rng.random() < 0.6 else None,
        context=phrase() if rng.random() < 0.4 else None,
        lecture=phrase() if rng.random() < 0.3 else None,
        split=rng.choice(("train", "validation")),
    )
    if rng.random() < 0.5:
        common["image_id"] = f"img_{record_id}"
        common["caption"] = phrase(2, 6)
    if rng.random() < 0.7:
        choices: list[str] = []
        while len(choices) < rng.randint(2, 5):
            candidate = phrase(1, 3)
            if candidate not in choices:
                choices.append(candidate)
        return QARecord(
            choices=tuple(choices),
            answer_index=rng.randrange(len(choices)),
            **common,
        )
    answers = [phrase(1, 2) for _ in range(rng.randint(1, 6))]
    return QARecord(gold_answers=tuple(answers), **common)
