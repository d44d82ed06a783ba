import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dermalign.corpus import (
    LABEL_CODES,
    Corpus,
    CorpusError,
    DuplicateIdError,
    ManifestParseError,
    UnknownLabelError,
    balanced_stream,
    class_histogram,
    load_manifest,
    malignancy,
    save_manifest,
)

from conftest import make_corpus, make_record


def write_manifest(tmp_path, rows):
    path = tmp_path / "manifest.jsonl"
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def row(id, label, split="train", **kw):
    base = {
        "id": id,
        "image_ref": f"images/{id}.png",
        "label": label,
        "subclass": "",
        "dataset": "src0",
        "split": split,
        "image_type": "dermoscopic",
        "bbox": "",
    }
    base.update(kw)
    return base


class TestLabels:
    def test_five_codes(self):
        assert len(LABEL_CODES) == 5

    def test_malignancy_mapping(self):
        assert malignancy("BEK") == "benign"
        assert malignancy("NEV") == "benign"
        assert malignancy("ACK") == "malignant"
        assert malignancy("BCC") == "malignant"
        assert malignancy("MEL") == "malignant"

    def test_ack_override(self):
        assert malignancy("ACK", ack_malignant=False) == "benign"

    def test_unknown_code(self):
        with pytest.raises(UnknownLabelError):
            malignancy("XYZ")


class TestLoadManifest:
    def test_three_records(self, tmp_path):
        path = write_manifest(
            tmp_path, [row("a", "NEV"), row("b", "MEL"), row("c", "BCC")]
        )
        corpus = load_manifest(path)
        assert len(corpus) == 3
        assert {r.label for r in corpus.records} == {"NEV", "MEL", "BCC"}

    def test_duplicate_id(self, tmp_path):
        path = write_manifest(tmp_path, [row("a1", "NEV"), row("a1", "MEL")])
        with pytest.raises(DuplicateIdError, match="a1"):
            load_manifest(path)

    def test_unknown_label(self, tmp_path):
        path = write_manifest(tmp_path, [row("a", "XYZ")])
        with pytest.raises(UnknownLabelError, match="XYZ"):
            load_manifest(path)

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(row("a", "NEV")) + "\nnot json\n")
        with pytest.raises(ManifestParseError, match="line 2"):
            load_manifest(path)

    def test_missing_field_names_line(self, tmp_path):
        bad = row("b", "NEV")
        del bad["dataset"]
        path = write_manifest(tmp_path, [row("a", "NEV"), bad])
        with pytest.raises(ManifestParseError, match="line 2"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestParseError):
            load_manifest(tmp_path / "nope.jsonl")

    def test_roundtrip_bit_exact(self, tmp_path):
        recs = [
            make_record("a", "NEV", bbox=(1, 2, 30, 40)),
            make_record("b", "MEL", subclass="nodular melanoma", split="test"),
            make_record("c", "ACK", split="val", image_type="clinical"),
        ]
        p1 = tmp_path / "m1.jsonl"
        save_manifest(recs, p1)
        corpus = load_manifest(p1)
        p2 = tmp_path / "m2.jsonl"
        save_manifest(corpus, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_sources_partition(self):
        recs = [
            make_record("a", "NEV", "train", dataset="in1"),
            make_record("b", "MEL", "val", dataset="in2"),
            make_record("c", "BCC", "test", dataset="in1"),
            make_record("d", "BEK", "test", dataset="ext1"),
        ]
        corpus = Corpus(recs)
        assert corpus.internal_sources == {"in1", "in2"}
        assert corpus.external_sources == {"ext1"}
        assert corpus.partition_of("ext1") == "external"
        # external sources never intersect train sources
        train_sources = {r.dataset for r in corpus.split_records("train")}
        assert not (corpus.external_sources & train_sources)


class TestHistogram:
    def test_toy_counts(self):
        corpus = make_corpus({"train": {"NEV": 2, "MEL": 1}})
        hist = class_histogram(corpus, "train")
        assert hist == {"BEK": 0, "NEV": 2, "ACK": 0, "BCC": 0, "MEL": 1}

    def test_sums_to_split_size(self):
        corpus = make_corpus({"train": {"NEV": 4, "BCC": 3}, "val": {"MEL": 2}})
        assert sum(class_histogram(corpus, "train").values()) == 7
        assert sum(class_histogram(corpus, "val").values()) == 2

    def test_training_partition_totals(self):
        # Full training-partition composition: per-class counts and the total.
        counts = {"BEK": 1443, "NEV": 4684, "ACK": 569, "BCC": 2416, "MEL": 2484}
        corpus = make_corpus({"train": counts})
        hist = class_histogram(corpus, "train")
        assert hist == counts
        assert sum(hist.values()) == 11596

    def test_empty_split_all_zero(self):
        corpus = make_corpus({"train": {"NEV": 1}})
        assert all(v == 0 for v in class_histogram(corpus, "test").values())


class TestBalancedStream:
    def test_8_2_window(self):
        # Oracle: the schedule upsamples each class to the majority count (8),
        # so the window holds 8 A + 8 B and each of the 2 B records appears
        # exactly 4 times.
        corpus = make_corpus({"train": {"NEV": 8, "MEL": 2}})
        window = balanced_stream(corpus, seed=0, strict=False)
        assert len(window) == 16
        by_class = Counter(rec.label for rec, _ in window)
        assert by_class == {"NEV": 8, "MEL": 8}
        per_record = Counter(rec.id for rec, _ in window if rec.label == "MEL")
        assert sorted(per_record.values()) == [4, 4]

    def test_duplicate_flags(self):
        corpus = make_corpus({"train": {"NEV": 8, "MEL": 2}})
        window = balanced_stream(corpus, seed=0, strict=False)
        dups = [rec.id for rec, is_dup in window if is_dup]
        # every duplicate is a MEL record seen before in the window
        assert all(rid.split("-")[1] == "MEL" for rid in dups)
        assert len(dups) == 6  # 8 scheduled - 2 first occurrences

    def test_balanced_is_permutation(self):
        corpus = make_corpus({"train": {"NEV": 5, "MEL": 5}})
        window = balanced_stream(corpus, seed=3, strict=False)
        ids = [rec.id for rec, _ in window]
        assert sorted(ids) == sorted(r.id for r in corpus.records)
        assert not any(is_dup for _, is_dup in window)

    def test_deterministic(self):
        corpus = make_corpus({"train": {"NEV": 7, "BCC": 3, "MEL": 2}})
        w1 = balanced_stream(corpus, seed=11, strict=False)
        w2 = balanced_stream(corpus, seed=11, strict=False)
        assert [(r.id, d) for r, d in w1] == [(r.id, d) for r, d in w2]

    def test_strict_missing_class(self):
        corpus = make_corpus({"train": {"NEV": 4}})
        with pytest.raises(CorpusError, match="zero train samples"):
            balanced_stream(corpus, seed=0, strict=True)

    def test_non_strict_warns_and_skips(self):
        corpus = make_corpus({"train": {"NEV": 4, "MEL": 2}})
        with pytest.warns(UserWarning, match="skipping"):
            window = balanced_stream(corpus, seed=0, strict=False)
        assert {rec.label for rec, _ in window} == {"NEV", "MEL"}

    def test_empty_train_split(self):
        corpus = make_corpus({"val": {"NEV": 3}})
        with pytest.raises(CorpusError, match="train split is empty"):
            balanced_stream(corpus, seed=0)

    @settings(max_examples=25, deadline=None)
    @given(
        counts=st.dictionaries(
            st.sampled_from(LABEL_CODES),
            st.integers(min_value=1, max_value=12),
            min_size=2,
            max_size=5,
        ),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_uniform_within_one(self, counts, seed):
        corpus = make_corpus({"train": counts})
        window = balanced_stream(corpus, seed=seed, strict=False)
        freqs = Counter(rec.label for rec, _ in window)
        assert max(freqs.values()) - min(freqs.values()) <= 1

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31))
    def test_no_external_records(self, seed):
        recs = [make_record(f"t{i}", "NEV", "train", dataset="in1") for i in range(4)]
        recs += [make_record(f"m{i}", "MEL", "train", dataset="in1") for i in range(2)]
        recs += [make_record(f"x{i}", "BCC", "test", dataset="ext1") for i in range(3)]
        corpus = Corpus(recs)
        window = balanced_stream(corpus, seed=seed, strict=False)
        assert all(rec.dataset not in corpus.external_sources for rec, _ in window)
