"""Data model for lesion cases: records, manifests, and balanced sampling.

A corpus is loaded once from a line-delimited JSON manifest and is immutable
afterwards; all downstream stages (note synthesis, preprocessing, training)
consume it read-only. Sources that never appear in the train/val splits are
treated as external test sources.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

# Five-class taxonomy. ACK sits on the malignant side of the benign/malignant
# template dichotomy by default (pre-malignant lesion grouped with the cancers);
# callers can override via ack_malignant=False where it matters.
LABEL_CODES = ("BEK", "NEV", "ACK", "BCC", "MEL")

LABEL_NAMES = {
    "BEK": "benign keratosis",
    "NEV": "benign nevus",
    "ACK": "actinic keratosis",
    "BCC": "basal-cell cancer",
    "MEL": "melanoma",
}

SPLITS = ("train", "val", "test")
IMAGE_TYPES = ("dermoscopic", "clinical")

_BENIGN_CODES = frozenset({"BEK", "NEV"})


class CorpusError(ValueError):
    """Base error for manifest and corpus validation failures."""


class ManifestParseError(CorpusError):
    pass


class UnknownLabelError(CorpusError):
    pass


class DuplicateIdError(CorpusError):
    pass


def malignancy(code: str, ack_malignant: bool = True) -> str:
    """Benign/malignant template value for a label code (pure function of code)."""
    if code not in LABEL_CODES:
        raise UnknownLabelError(f"unknown label code {code!r}")
    if code == "ACK":
        return "malignant" if ack_malignant else "benign"
    return "benign" if code in _BENIGN_CODES else "malignant"


@dataclass(frozen=True)
class SampleRecord:
    """One lesion case. `bbox` is (x, y, w, h) in source-image pixels."""

    id: str
    image_ref: str
    label: str
    subclass: str
    dataset: str
    split: str
    image_type: str
    bbox: Optional[tuple[int, int, int, int]] = None

    def validate(self) -> None:
        if not self.id:
            raise CorpusError("record id must be non-empty")
        if self.label not in LABEL_CODES:
            raise UnknownLabelError(
                f"unknown label code {self.label!r} for record {self.id!r}"
            )
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r} for record {self.id!r}")
        if self.image_type not in IMAGE_TYPES:
            raise CorpusError(
                f"unknown image_type {self.image_type!r} for record {self.id!r}"
            )
        if self.bbox is not None:
            x, y, w, h = self.bbox
            if w <= 0 or h <= 0 or x < 0 or y < 0:
                raise CorpusError(f"degenerate bbox {self.bbox} for record {self.id!r}")


class Corpus:
    """Immutable collection of SampleRecords with per-split source bookkeeping.

    Internal sources are those contributing train or val records; sources seen
    only in the test split are external and by construction never train.
    """

    def __init__(self, records: Sequence[SampleRecord], manifest_path: Optional[str] = None):
        seen: set[str] = set()
        for rec in records:
            rec.validate()
            if rec.id in seen:
                raise DuplicateIdError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
        self._records = tuple(records)
        self._by_id = {rec.id: rec for rec in self._records}
        self.manifest_path = manifest_path
        self.datasets = frozenset(rec.dataset for rec in self._records)
        trainval = {rec.dataset for rec in self._records if rec.split in ("train", "val")}
        self.internal_sources = frozenset(trainval)
        self.external_sources = frozenset(self.datasets - trainval)

    @property
    def records(self) -> tuple[SampleRecord, ...]:
        return self._records

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, record_id: str) -> SampleRecord:
        return self._by_id[record_id]

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._by_id

    def split_records(self, split: str) -> list[SampleRecord]:
        if split not in SPLITS:
            raise CorpusError(f"unknown split {split!r}")
        return [rec for rec in self._records if rec.split == split]

    def datasets_in_split(self, split: str) -> list[str]:
        return sorted({rec.dataset for rec in self.split_records(split)})

    def partition_of(self, dataset: str) -> str:
        return "external" if dataset in self.external_sources else "internal"


def _record_to_json(rec: SampleRecord) -> str:
    # Canonical field order; missing optionals serialized as empty string.
    obj = {
        "id": rec.id,
        "image_ref": rec.image_ref,
        "label": rec.label,
        "subclass": rec.subclass,
        "dataset": rec.dataset,
        "split": rec.split,
        "image_type": rec.image_type,
        "bbox": list(rec.bbox) if rec.bbox is not None else "",
    }
    return json.dumps(obj, separators=(",", ":"))


def _record_from_obj(obj: dict, lineno: int) -> SampleRecord:
    required = ("id", "image_ref", "label", "dataset", "split", "image_type")
    for key in required:
        if key not in obj or obj[key] in ("", None):
            raise ManifestParseError(f"line {lineno}: missing field {key!r}")
    raw_bbox = obj.get("bbox", "")
    bbox: Optional[tuple[int, int, int, int]]
    if raw_bbox in ("", None):
        bbox = None
    else:
        try:
            x, y, w, h = (int(v) for v in raw_bbox)
            bbox = (x, y, w, h)
        except (TypeError, ValueError) as exc:
            raise ManifestParseError(f"line {lineno}: malformed bbox {raw_bbox!r}") from exc
    return SampleRecord(
        id=str(obj["id"]),
        image_ref=str(obj["image_ref"]),
        label=str(obj["label"]),
        subclass=str(obj.get("subclass") or ""),
        dataset=str(obj["dataset"]),
        split=str(obj["split"]),
        image_type=str(obj["image_type"]),
        bbox=bbox,
    )


def load_manifest(path: str | Path) -> Corpus:
    """Parse a line-delimited manifest into a validated Corpus.

    Raises ManifestParseError (with line number), UnknownLabelError, or
    DuplicateIdError on malformed input.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestParseError(f"manifest not found: {path}")
    records: list[SampleRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(f"line {lineno}: not valid JSON ({exc.msg})") from exc
            rec = _record_from_obj(obj, lineno)
            try:
                rec.validate()
            except CorpusError as exc:
                if isinstance(exc, UnknownLabelError):
                    raise UnknownLabelError(f"line {lineno}: {exc}") from exc
                raise CorpusError(f"line {lineno}: {exc}") from exc
            records.append(rec)
    return Corpus(records, manifest_path=str(path))


def save_manifest(corpus: Corpus | Iterable[SampleRecord], path: str | Path) -> None:
    """Write records in canonical line-delimited form (round-trips bit-exactly)."""
    records = corpus.records if isinstance(corpus, Corpus) else tuple(corpus)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_record_to_json(rec) + "\n")


def class_histogram(corpus: Corpus, split: str) -> dict[str, int]:
    """Per-label record counts over one split; all five codes always present."""
    counts = {code: 0 for code in LABEL_CODES}
    for rec in corpus.split_records(split):
        counts[rec.label] += 1
    return counts


def balanced_stream(
    corpus: Corpus, seed: int, strict: bool = True
) -> list[tuple[SampleRecord, bool]]:
    """One epoch-length window over the train split with uniform class frequency.

    Every class present is upsampled to the majority-class count by repeating
    seeded permutations of its records; repeats beyond a record's first
    occurrence are flagged as duplicates so augmentation can be preferentially
    fed to them. Pure function of (corpus, seed).
    """
    train = corpus.split_records("train")
    if not train:
        raise CorpusError("train split is empty")
    by_class: dict[str, list[SampleRecord]] = {code: [] for code in LABEL_CODES}
    for rec in train:
        by_class[rec.label].append(rec)
    missing = [code for code, recs in by_class.items() if not recs]
    if missing:
        if strict:
            raise CorpusError(f"classes with zero train samples: {missing}")
        warnings.warn(f"skipping classes with zero train samples: {missing}")
    present = {code: recs for code, recs in by_class.items() if recs}

    rng = np.random.default_rng(seed)
    target = max(len(recs) for recs in present.values())
    window: list[tuple[SampleRecord, bool]] = []
    for code in LABEL_CODES:  # fixed class order keeps the schedule reproducible
        recs = present.get(code)
        if not recs:
            continue
        seen_ids: set[str] = set()
        scheduled: list[tuple[SampleRecord, bool]] = []
        while len(scheduled) < target:
            perm = rng.permutation(len(recs))
            for idx in perm:
                if len(scheduled) >= target:
                    break
                rec = recs[idx]
                scheduled.append((rec, rec.id in seen_ids))
                seen_ids.add(rec.id)
        window.extend(scheduled)

    order = rng.permutation(len(window))
    return [window[i] for i in order]
