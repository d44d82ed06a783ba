"""Evaluation protocols: agreement, bidirectional retrieval, and alignment.

Three tasks over a trained checkpoint, reported per test dataset with an
internal/external partition tag:

  classify        - Cohen's kappa between predicted and true labels.
  retrieve-notes  - images query a pool holding every strategy's notes; mAP.
  retrieve-images - the training strategy's notes query the image pool; mAP.
  alignment       - mean cosine similarity of paired image/text embeddings.

Retrieval relevance is class-level: a pool item is relevant when its record
carries the same diagnostic label as the query's record (an exact-pair mode is
available via `relevance="pair"`). Reports aggregate per-seed values into
mean +/- std (unbiased) across checkpoints.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import LABEL_CODES, Corpus, SampleRecord
from .notegen import STRATEGIES, ClinicalNote, notes_by_id
from .preprocess import WordPieceTokenizer, default_tokenizer, load_cached_image
from .model import MultiModalModel, images_to_tensor, load_checkpoint, tokens_to_tensor

TASKS = ("classify", "retrieve-notes", "retrieve-images", "alignment")

_METRIC_FOR_TASK = {
    "classify": "kappa",
    "retrieve-notes": "map",
    "retrieve-images": "map",
    "alignment": "cosine",
}


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def cohen_kappa(y_true: Sequence, y_pred: Sequence) -> float:
    """Unweighted Cohen's kappa with marginal-product chance agreement."""
    if len(y_true) != len(y_pred):
        raise EvalError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) == 0:
        raise EvalError("kappa is undefined on empty label lists")
    labels = sorted(set(y_true) | set(y_pred), key=str)
    index = {lab: i for i, lab in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.float64)
    for t, p in zip(y_true, y_pred):
        confusion[index[t], index[p]] += 1
    n = confusion.sum()
    p_o = np.trace(confusion) / n
    p_e = float((confusion.sum(axis=1) / n) @ (confusion.sum(axis=0) / n))
    if p_e >= 1.0:
        return 1.0  # both raters degenerate on one label; agreement is total
    return float((p_o - p_e) / (1.0 - p_e))


def _average_precision(ranked_relevance: np.ndarray) -> float:
    """AP over a ranked boolean relevance vector (precision at relevant ranks)."""
    hits = np.flatnonzero(ranked_relevance)
    if hits.size == 0:
        raise EvalError("average precision is undefined with no relevant items")
    precisions = (np.arange(hits.size) + 1.0) / (hits + 1.0)
    return float(precisions.mean())


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise EvalError("zero vector in embedding matrix")
    return x / norms


def mean_average_precision(
    queries: np.ndarray, pool: np.ndarray, relevance: np.ndarray
) -> float:
    """mAP of cosine-ranked retrieval; ties broken by stable pool index.

    Queries with zero relevant pool items are excluded (with a warning) so AP
    stays defined for the rest.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    relevance = np.asarray(relevance, dtype=bool)
    if relevance.shape != (queries.shape[0], pool.shape[0]):
        raise EvalError(
            f"relevance must be {queries.shape[0]}x{pool.shape[0]}, got {relevance.shape}"
        )
    if pool.shape[0] == 0:
        raise EvalError("empty retrieval pool")
    sims = _unit_rows(queries) @ _unit_rows(pool).T
    aps = []
    excluded = 0
    for i in range(queries.shape[0]):
        if not relevance[i].any():
            excluded += 1
            continue
        order = np.argsort(-sims[i], kind="stable")
        aps.append(_average_precision(relevance[i][order]))
    if excluded:
        warnings.warn(f"excluded {excluded} queries with no relevant pool items")
    if not aps:
        raise EvalError("no query had any relevant pool item")
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# embedding helpers
# ---------------------------------------------------------------------------


def encode_images(
    model: MultiModalModel,
    records: Sequence[SampleRecord],
    cache_dir: str | Path,
    batch_size: int = 64,
) -> np.ndarray:
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            batch = records[start : start + batch_size]
            images = np.stack([load_cached_image(cache_dir, rec.id) for rec in batch])
            chunks.append(model.encode_image(images_to_tensor(images)).numpy())
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, model.config.shared_dim))


def encode_texts(
    model: MultiModalModel,
    texts: Sequence[str],
    tokenizer: Optional[WordPieceTokenizer] = None,
    batch_size: int = 64,
) -> np.ndarray:
    tokenizer = tokenizer or default_tokenizer()
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            seqs = [tokenizer.tokenize(t) for t in texts[start : start + batch_size]]
            ids, mask = tokens_to_tensor(seqs, pad_id=tokenizer.pad_id)
            chunks.append(model.encode_text(ids, mask).numpy())
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, model.config.shared_dim))


def predict_labels(
    model: MultiModalModel,
    records: Sequence[SampleRecord],
    cache_dir: str | Path,
    batch_size: int = 64,
) -> list[str]:
    model.eval()
    preds: list[str] = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            batch = records[start : start + batch_size]
            images = np.stack([load_cached_image(cache_dir, rec.id) for rec in batch])
            logits = model.classify(model.encode_image(images_to_tensor(images)))
            preds.extend(LABEL_CODES[i] for i in logits.argmax(dim=1).tolist())
    return preds


# ---------------------------------------------------------------------------
# tasks (single checkpoint -> per-dataset values)
# ---------------------------------------------------------------------------


def classify_task(
    model: MultiModalModel, corpus: Corpus, cache_dir: str | Path
) -> dict[str, float]:
    """Image-classification kappa per test dataset."""
    out = {}
    for dataset in corpus.datasets_in_split("test"):
        records = [r for r in corpus.split_records("test") if r.dataset == dataset]
        preds = predict_labels(model, records, cache_dir)
        out[dataset] = cohen_kappa([r.label for r in records], preds)
    return out


def _relevance_matrix(
    query_records: Sequence[SampleRecord],
    pool_records: Sequence[SampleRecord],
    mode: str = "class",
) -> np.ndarray:
    if mode == "class":
        q = np.array([r.label for r in query_records])
        p = np.array([r.label for r in pool_records])
        return q[:, None] == p[None, :]
    if mode == "pair":
        q = np.array([r.id for r in query_records])
        p = np.array([r.id for r in pool_records])
        return q[:, None] == p[None, :]
    raise EvalError(f"unknown relevance mode {mode!r}")


def retrieve_notes_task(
    model: MultiModalModel,
    corpus: Corpus,
    cache_dir: str | Path,
    notes_by_strategy: dict[str, list[ClinicalNote]],
    relevance: str = "class",
) -> dict[str, float]:
    """Images query a note pool containing all four strategies' descriptions."""
    missing = [s for s in STRATEGIES if s not in notes_by_strategy]
    if missing:
        raise EvalError(f"retrieve-notes pool requires notes from all strategies; missing {missing}")
    out = {}
    for dataset in corpus.datasets_in_split("test"):
        records = [r for r in corpus.split_records("test") if r.dataset == dataset]
        ids = {r.id for r in records}
        pool_notes: list[ClinicalNote] = []
        for strategy in STRATEGIES:
            pool_notes.extend(n for n in notes_by_strategy[strategy] if n.sample_id in ids)
        if not pool_notes:
            raise EvalError(f"empty note pool for dataset {dataset!r}")
        pool_records = [corpus[n.sample_id] for n in pool_notes]
        z_img = encode_images(model, records, cache_dir)
        z_txt = encode_texts(model, [n.text for n in pool_notes])
        rel = _relevance_matrix(records, pool_records, relevance)
        out[dataset] = mean_average_precision(z_img, z_txt, rel)
    return out


def retrieve_images_task(
    model: MultiModalModel,
    corpus: Corpus,
    cache_dir: str | Path,
    notes: list[ClinicalNote],
    checkpoint_strategy: str,
    relevance: str = "class",
) -> dict[str, float]:
    """The training strategy's notes query the test image pool."""
    wrong = {n.strategy for n in notes} - {checkpoint_strategy}
    if wrong:
        raise EvalError(
            f"notes of strategies {sorted(wrong)} do not match checkpoint strategy "
            f"{checkpoint_strategy!r}"
        )
    by_id = notes_by_id(notes)
    out = {}
    for dataset in corpus.datasets_in_split("test"):
        records = [r for r in corpus.split_records("test") if r.dataset == dataset]
        query_records = [r for r in records if r.id in by_id]
        if not query_records:
            raise EvalError(f"no notes for dataset {dataset!r}")
        z_txt = encode_texts(model, [by_id[r.id].text for r in query_records])
        z_img = encode_images(model, records, cache_dir)
        rel = _relevance_matrix(query_records, records, relevance)
        out[dataset] = mean_average_precision(z_txt, z_img, rel)
    return out


def alignment_task(
    model: MultiModalModel,
    corpus: Corpus,
    cache_dir: str | Path,
    notes: list[ClinicalNote],
) -> dict[str, float]:
    """Mean cosine similarity of paired image/text embeddings per dataset."""
    by_id = notes_by_id(notes)
    out = {}
    for dataset in corpus.datasets_in_split("test"):
        records = [r for r in corpus.split_records("test") if r.dataset == dataset]
        missing = [r.id for r in records if r.id not in by_id]
        if missing:
            raise EvalError(f"missing notes for records: {missing[:5]}")
        z_img = _unit_rows(encode_images(model, records, cache_dir))
        z_txt = _unit_rows(encode_texts(model, [by_id[r.id].text for r in records]))
        out[dataset] = float((z_img * z_txt).sum(axis=1).mean())
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ReportEntry:
    dataset: str
    partition: str  # internal | external
    task: str
    strategy: str  # M | M_P1 | M_P2 | P3 | Img
    metric: str
    mean: float
    std: float
    n_seeds: int
    values: list[float] = field(default_factory=list)


@dataclass
class EvalReport:
    meta: dict
    entries: list[ReportEntry]

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "entries": [vars(e) for e in self.entries],
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(self.to_dict(), sort_keys=True, indent=1)
        path.write_text(payload + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(meta=obj["meta"], entries=[ReportEntry(**e) for e in obj["entries"]])

    def lookup(self, dataset: str, task: str, strategy: str) -> Optional[ReportEntry]:
        for e in self.entries:
            if e.dataset == dataset and e.task == task and e.strategy == strategy:
                return e
        return None


def _aggregate(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def run_evaluation(
    ckpt_paths: Sequence[str | Path],
    corpus: Corpus,
    cache_dir: str | Path,
    notes_by_strategy: dict[str, list[ClinicalNote]],
    tasks: Sequence[str] = TASKS,
    relevance: str = "class",
) -> EvalReport:
    """Evaluate checkpoints (one per training seed) and aggregate mean +/- std.

    All checkpoints must share the training strategy; fewer than 3 seeds is
    allowed but warned, since reported tables aggregate at least 3.
    """
    for task in tasks:
        if task not in TASKS:
            raise EvalError(f"unknown task {task!r}; expected one of {TASKS}")
    if not ckpt_paths:
        raise EvalError("no checkpoints given")
    if len(ckpt_paths) < 3:
        warnings.warn(f"aggregating only {len(ckpt_paths)} seed(s); reports expect >= 3")

    per_key_values: dict[tuple[str, str], list[float]] = {}
    strategy = None
    seeds = []
    for path in ckpt_paths:
        model, meta = load_checkpoint(path)
        ckpt_strategy = meta.get("strategy") or "Img"
        if strategy is None:
            strategy = ckpt_strategy
        elif strategy != ckpt_strategy:
            raise EvalError(
                f"checkpoints mix strategies {strategy!r} and {ckpt_strategy!r}"
            )
        expected_hash = meta.get("vocab_hash")
        if model.is_multimodal and expected_hash and expected_hash != default_tokenizer().vocab_hash:
            raise EvalError(f"{path}: checkpoint was trained with a different vocabulary")
        if model.is_multimodal and strategy not in notes_by_strategy:
            needs_own_notes = {"retrieve-images", "alignment"} & set(tasks)
            if needs_own_notes:
                raise EvalError(f"no notes provided for checkpoint strategy {strategy!r}")
        seeds.append(meta.get("config", {}).get("seed"))
        for task in tasks:
            if task == "classify":
                values = classify_task(model, corpus, cache_dir)
            elif task == "retrieve-notes":
                if not model.is_multimodal:
                    continue
                values = retrieve_notes_task(
                    model, corpus, cache_dir, notes_by_strategy, relevance
                )
            elif task == "retrieve-images":
                if not model.is_multimodal:
                    continue
                values = retrieve_images_task(
                    model, corpus, cache_dir, notes_by_strategy[strategy], strategy, relevance
                )
            else:
                if not model.is_multimodal:
                    continue
                values = alignment_task(model, corpus, cache_dir, notes_by_strategy[strategy])
            for dataset, value in values.items():
                per_key_values.setdefault((dataset, task), []).append(value)

    entries = []
    for (dataset, task), values in sorted(per_key_values.items()):
        mean, std = _aggregate(values)
        entries.append(
            ReportEntry(
                dataset=dataset,
                partition=corpus.partition_of(dataset),
                task=task,
                strategy=strategy,
                metric=_METRIC_FOR_TASK[task],
                mean=mean,
                std=std,
                n_seeds=len(values),
                values=[float(v) for v in values],
            )
        )
    meta = {
        "strategy": strategy,
        "seeds": seeds,
        "n_checkpoints": len(ckpt_paths),
        "tasks": list(tasks),
        "relevance": relevance,
    }
    return EvalReport(meta=meta, entries=entries)
