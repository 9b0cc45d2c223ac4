"""Loader, validation, and caption-attachment tests."""

from __future__ import annotations

import dataclasses
import json
import random

import pytest

from cotvqa import (
    CaptionMap,
    Corpus,
    CorpusError,
    QARecord,
    Split,
    attach_captions,
    canonical_gold,
    load_caption_file,
    load_scienceqa,
    load_textvqa,
    select_split,
)

from .conftest import WORDS, make_organism_record


def _write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")
    return path


def _scienceqa_obj(**overrides):
    obj = {
        "id": "r1",
        "question": "Which is this organism's common name?",
        "choices": ["crown-of-thorns sea star", "Acanthaster planci"],
        "answer": 0,
        "split": "train",
    }
    obj.update(overrides)
    return obj


def _textvqa_obj(**overrides):
    obj = {
        "id": "t1",
        "question": "what does the sign say?",
        "answers": ["stop"],
        "split": "train",
    }
    obj.update(overrides)
    return obj


class TestLoadScienceqa:
    def test_example_line(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [_scienceqa_obj()])
        corpus = load_scienceqa(path)
        assert len(corpus) == 1
        record = corpus.records[0]
        assert record.answer_index == 0
        assert record.gold_answers is None
        assert record.choices == ("crown-of-thorns sea star", "Acanthaster planci")
        assert record.gold_answer() == "crown-of-thorns sea star"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert len(load_scienceqa(path)) == 0

    def test_out_of_range_answer_names_line(self, tmp_path):
        path = _write_lines(
            tmp_path / "d.jsonl",
            [_scienceqa_obj(), _scienceqa_obj(id="r2", answer=5)],
        )
        with pytest.raises(CorpusError, match=r"d\.jsonl:2"):
            load_scienceqa(path)

    def test_lenient_drops_invalid_records(self, tmp_path):
        path = _write_lines(
            tmp_path / "d.jsonl",
            [_scienceqa_obj(), _scienceqa_obj(id="r2", answer=5), _scienceqa_obj(id="r3")],
        )
        corpus = load_scienceqa(path, strict=False)
        assert [r.id for r in corpus] == ["r1", "r3"]

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(_scienceqa_obj()) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(CorpusError, match=r"d\.jsonl:2"):
            load_scienceqa(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(CorpusError, match="cannot read"):
            load_scienceqa(tmp_path / "missing.jsonl")

    def test_duplicate_ids_rejected(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [_scienceqa_obj(), _scienceqa_obj()])
        with pytest.raises(CorpusError, match="duplicate record id"):
            load_scienceqa(path)

    def test_missing_required_key_named(self, tmp_path):
        obj = _scienceqa_obj()
        del obj["answer"]
        path = _write_lines(tmp_path / "d.jsonl", [obj])
        with pytest.raises(CorpusError, match="answer"):
            load_scienceqa(path)

    def test_loading_is_deterministic(self, tmp_path):
        path = _write_lines(
            tmp_path / "d.jsonl",
            [_scienceqa_obj(id=f"r{i}", answer=i % 2) for i in range(5)],
        )
        assert load_scienceqa(path).records == load_scienceqa(path).records


class TestLoadTextvqa:
    def test_majority_answer_wins(self, tmp_path):
        answers = ["yes"] * 6 + ["no"] * 4
        path = _write_lines(tmp_path / "t.jsonl", [_textvqa_obj(answers=answers)])
        corpus = load_textvqa(path)
        record = corpus.records[0]
        assert record.choices == ()
        assert record.answer_index is None
        assert record.gold_answer() == "yes"

    def test_ties_break_lexicographically(self, tmp_path):
        path = _write_lines(tmp_path / "t.jsonl", [_textvqa_obj(answers=["a", "b", "c"])])
        assert load_textvqa(path).records[0].gold_answer() == "a"

    def test_empty_answer_list_rejected(self, tmp_path):
        path = _write_lines(tmp_path / "t.jsonl", [_textvqa_obj(answers=[])])
        with pytest.raises(CorpusError, match="gold_answers"):
            load_textvqa(path)


class TestCanonicalGold:
    def test_matches_brute_force_counter(self):
        rng = random.Random(11)
        for _ in range(300):
            answers = [
                " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 2))).title()
                for _ in range(rng.randint(1, 12))
            ]
            # brute force: count each normalized form by scanning the list
            normalized = [" ".join(a.lower().split()) for a in answers]
            best_count = max(normalized.count(a) for a in normalized)
            modes = sorted(a for a in set(normalized) if normalized.count(a) == best_count)
            assert canonical_gold(answers) == modes[0]

    def test_empty_list_rejected(self):
        with pytest.raises(CorpusError):
            canonical_gold([])


class TestRecordValidation:
    def test_both_answer_kinds_rejected(self):
        with pytest.raises(CorpusError, match="exactly one"):
            make_organism_record(gold_answers=("x",))

    def test_neither_answer_kind_rejected(self):
        with pytest.raises(CorpusError, match="exactly one"):
            QARecord(id="x", question="q?")

    def test_single_choice_rejected(self):
        with pytest.raises(CorpusError, match="at least 2"):
            make_organism_record(choices=("only",), answer_index=0)

    def test_empty_question_rejected(self):
        with pytest.raises(CorpusError, match="question"):
            make_organism_record(question="")

    def test_caption_without_image_rejected(self):
        with pytest.raises(CorpusError, match="caption"):
            make_organism_record(image_id=None)

    def test_empty_gold_answer_string_rejected(self):
        with pytest.raises(CorpusError, match="gold_answers"):
            QARecord(id="x", question="q?", gold_answers=("ok", ""))

    def test_unknown_split_rejected(self):
        with pytest.raises(CorpusError, match="split"):
            make_organism_record(split="dev")

    def test_records_are_immutable(self):
        record = make_organism_record()
        with pytest.raises(dataclasses.FrozenInstanceError):
            record.caption = "other"


class TestAttachCaptions:
    def _corpus(self, *records):
        return Corpus(records=tuple(records), provenance="mem", schema="scienceqa")

    def test_caption_attached_verbatim(self):
        record = make_organism_record(caption=None)
        captions = CaptionMap({"img_0": "a blue and white vase sitting on top of a rock"})
        out = attach_captions(self._corpus(record), captions)
        assert out.records[0].caption == "a blue and white vase sitting on top of a rock"

    def test_record_without_image_unchanged(self):
        record = make_organism_record(image_id=None, caption=None)
        out = attach_captions(self._corpus(record), CaptionMap({"img_0": "a vase"}))
        assert out.records[0] == record

    def test_strict_unknown_id_listed(self):
        record = make_organism_record(caption=None)
        captions = CaptionMap({"img_0": "a vase", "zzz": "stray"})
        with pytest.raises(CorpusError, match="zzz"):
            attach_captions(self._corpus(record), captions, strict=True)

    def test_strict_missing_entry_listed(self):
        record = make_organism_record(caption=None)
        with pytest.raises(CorpusError, match="img_0"):
            attach_captions(self._corpus(record), CaptionMap({}), strict=True)

    def test_original_corpus_not_mutated(self):
        record = make_organism_record(caption=None)
        corpus = self._corpus(record)
        attach_captions(corpus, CaptionMap({"img_0": "a vase"}))
        assert corpus.records[0].caption is None

    def test_only_caption_changes_and_count_preserved(self):
        records = [
            make_organism_record(caption=None),
            make_organism_record(id="other", image_id=None, caption=None),
        ]
        corpus = self._corpus(*records)
        out = attach_captions(corpus, CaptionMap({"img_0": "a vase"}))
        assert len(out) == len(corpus)
        for before, after in zip(corpus, out):
            before_fields = dataclasses.asdict(before)
            after_fields = dataclasses.asdict(after)
            before_fields.pop("caption")
            after_fields.pop("caption")
            assert before_fields == after_fields


class TestSelectSplit:
    def _mixed_corpus(self):
        records = [
            make_organism_record(id=f"r{i}", split="train" if i < 3 else "validation")
            for i in range(5)
        ]
        return Corpus(records=tuple(records), provenance="mem", schema="scienceqa")

    def test_filters_by_split(self):
        assert len(select_split(self._mixed_corpus(), Split.VALIDATION)) == 2

    def test_empty_split(self):
        assert len(select_split(self._mixed_corpus(), Split.TEST)) == 0

    def test_idempotent(self):
        corpus = self._mixed_corpus()
        once = select_split(corpus, Split.TRAIN)
        assert select_split(once, Split.TRAIN).records == once.records

    def test_partitions_corpus(self):
        corpus = self._mixed_corpus()
        parts = [select_split(corpus, split).records for split in Split]
        ids = [record.id for part in parts for record in part]
        assert sorted(ids) == sorted(record.id for record in corpus)
        assert len(ids) == len(set(ids))


class TestCaptionFile:
    def test_load_entries(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("img_0\ta blue vase\nimg_1\ta red rock\n", encoding="utf-8")
        captions = load_caption_file(path)
        assert captions.entries == {"img_0": "a blue vase", "img_1": "a red rock"}

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("img_0\ta vase\nimg_0\tanother\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="duplicate"):
            load_caption_file(path)

    def test_missing_tab_rejected(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("img_0 a vase\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="c.tsv:1"):
            load_caption_file(path)

    def test_empty_caption_rejected(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("img_0\t\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="empty caption"):
            load_caption_file(path)
