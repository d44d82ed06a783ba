"""Flat cosine embedding index and the interactive retrieval service.

The index holds one unit-normalized vector per image and per note of a corpus,
produced by one checkpoint (whose file hash is recorded and verified). Queries
run an exhaustive similarity scan; at desk scale that is exact and fast.

The HTTP layer exposes:
  GET  /health                       -> {status, index_size, checkpoint_hash}
  POST /query/text  {text,k,filter}  -> {results: [...]}
  POST /query/image (multipart)      -> {results: [...]}
  POST /query/item  {id,k,filter}    -> {results: [...]}   ("more like this")
  GET  /item/{id}                    -> full metadata, note text or image data
CORS is enabled for the explorer UI.
"""

from __future__ import annotations

import base64
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .corpus import Corpus
from .notegen import ClinicalNote
from .preprocess import default_tokenizer, load_cached_image, otsu_crop
from .model import (
    images_to_tensor,
    load_checkpoint,
    read_container,
    tokens_to_tensor,
    write_container,
)
from .utils import sha256_file

MODALITIES = ("image", "text")


class IndexError_(ValueError):
    pass


@dataclass
class EmbeddingIndex:
    """Immutable flat index: ids, modalities, unit vectors, display metadata."""

    ids: list[str]
    modalities: list[str]
    vectors: np.ndarray  # (n, d) float32, unit rows
    metadata: list[dict]
    checkpoint_hash: str

    def __post_init__(self):
        n = len(self.ids)
        if not (len(self.modalities) == n and len(self.metadata) == n and self.vectors.shape[0] == n):
            raise IndexError_("index field lengths disagree")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def save(self, path: str | Path) -> None:
        meta = {
            "ids": self.ids,
            "modalities": self.modalities,
            "metadata": self.metadata,
            "checkpoint_hash": self.checkpoint_hash,
        }
        write_container(path, "index", meta, {"vectors": self.vectors.astype("<f4")})

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        header, arrays = read_container(path, expect_kind="index")
        meta = header["meta"]
        return cls(
            ids=list(meta["ids"]),
            modalities=list(meta["modalities"]),
            vectors=np.asarray(arrays["vectors"], dtype=np.float32),
            metadata=list(meta["metadata"]),
            checkpoint_hash=meta["checkpoint_hash"],
        )

    def entry(self, item_id: str) -> tuple[int, dict]:
        for i, known in enumerate(self.ids):
            if known == item_id:
                return i, self.metadata[i]
        raise KeyError(item_id)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise IndexError_("cannot index a zero vector")
    return (v / norm).astype(np.float32)


def build_index(
    ckpt_path: str | Path,
    corpus: Corpus,
    notes: list[ClinicalNote],
    cache_dir: str | Path,
) -> EmbeddingIndex:
    """Embed every image and note of the corpus with one checkpoint.

    Entries are ordered by record id, images before notes, so rebuilding from
    identical inputs yields a byte-identical file.
    """
    model, meta = load_checkpoint(ckpt_path)
    if not model.is_multimodal:
        raise IndexError_("index building requires a multimodal checkpoint")
    tokenizer = default_tokenizer()
    if meta.get("vocab_hash") and meta["vocab_hash"] != tokenizer.vocab_hash:
        raise IndexError_("checkpoint vocabulary does not match the packaged tokenizer")

    note_map = {n.sample_id: n for n in notes}
    records = sorted(corpus.records, key=lambda r: r.id)
    ids: list[str] = []
    modalities: list[str] = []
    metadata: list[dict] = []
    vecs: list[np.ndarray] = []

    model.eval()
    with torch.no_grad():
        for rec in records:
            img = load_cached_image(cache_dir, rec.id)
            z = model.encode_image(images_to_tensor(img[None]))[0].numpy()
            ids.append(f"img:{rec.id}")
            modalities.append("image")
            metadata.append(
                {
                    "sample_id": rec.id,
                    "label": rec.label,
                    "dataset": rec.dataset,
                    "split": rec.split,
                    "preview": rec.image_ref,
                }
            )
            vecs.append(_unit(z))
        for rec in records:
            note = note_map.get(rec.id)
            if note is None:
                continue
            seq = tokenizer.tokenize(note.text)
            t_ids, mask = tokens_to_tensor([seq], pad_id=tokenizer.pad_id)
            z = model.encode_text(t_ids, mask)[0].numpy()
            ids.append(f"txt:{rec.id}")
            modalities.append("text")
            metadata.append(
                {
                    "sample_id": rec.id,
                    "label": rec.label,
                    "dataset": rec.dataset,
                    "split": rec.split,
                    "strategy": note.strategy,
                    "preview": note.text,
                }
            )
            vecs.append(_unit(z))

    return EmbeddingIndex(
        ids=ids,
        modalities=modalities,
        vectors=np.stack(vecs),
        metadata=metadata,
        checkpoint_hash=sha256_file(ckpt_path),
    )


def query_index(
    index: EmbeddingIndex,
    vector: np.ndarray,
    k: int,
    modality_filter: Optional[str] = None,
) -> list[dict]:
    """Top-k by cosine similarity with stable tie-break; scores descending."""
    if k < 1:
        raise IndexError_(f"k must be >= 1, got {k}")
    if modality_filter is not None and modality_filter not in MODALITIES:
        raise IndexError_(f"unknown modality filter {modality_filter!r}")
    q = _unit(np.asarray(vector, dtype=np.float64))
    candidates = np.arange(len(index))
    if modality_filter is not None:
        candidates = np.array(
            [i for i in candidates if index.modalities[i] == modality_filter], dtype=int
        )
    if candidates.size == 0:
        return []
    sims = index.vectors[candidates].astype(np.float64) @ q
    if k > candidates.size:
        warnings.warn(f"k={k} exceeds candidate count {candidates.size}; returning full ranking")
        k = candidates.size
    order = np.argsort(-sims, kind="stable")[:k]
    results = []
    for rank in order:
        i = int(candidates[rank])
        results.append(
            {
                "id": index.ids[i],
                "score": float(sims[rank]),
                "label": index.metadata[i]["label"],
                "modality": index.modalities[i],
                "preview": index.metadata[i]["preview"],
            }
        )
    return results


# Request bodies live at module scope: postponed annotations (PEP 563) make
# closure-local pydantic models unresolvable for FastAPI.
class TextQuery(BaseModel):
    text: str
    k: int = 10
    filter: Optional[str] = None


class ItemQuery(BaseModel):
    id: str
    k: int = 10
    filter: Optional[str] = None


class QueryEncoder:
    """Encodes free text or uploaded images with the index's checkpoint."""

    def __init__(self, ckpt_path: str | Path):
        self.model, self.meta = load_checkpoint(ckpt_path)
        if not self.model.is_multimodal:
            raise IndexError_("the query encoder requires a multimodal checkpoint")
        self.tokenizer = default_tokenizer()
        self.checkpoint_hash = sha256_file(ckpt_path)

    def encode_text(self, text: str) -> np.ndarray:
        seq = self.tokenizer.tokenize(text)
        ids, mask = tokens_to_tensor([seq], pad_id=self.tokenizer.pad_id)
        with torch.no_grad():
            return self.model.encode_text(ids, mask)[0].numpy()

    def encode_image_bytes(self, data: bytes) -> np.ndarray:
        from PIL import Image

        with Image.open(io.BytesIO(data)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        # Incoming queries run the dermoscopic pipeline; degenerate masks fall
        # back to a full-image resize.
        crop = otsu_crop(arr)
        with torch.no_grad():
            return self.model.encode_image(images_to_tensor(crop.image[None]))[0].numpy()


def create_app(index_path: str | Path, ckpt_path: str | Path, cache_dir: Optional[str | Path] = None):
    """FastAPI application serving a prebuilt index; read-only after load."""
    index = EmbeddingIndex.load(index_path)
    encoder = QueryEncoder(ckpt_path)
    if index.checkpoint_hash != encoder.checkpoint_hash:
        raise IndexError_(
            "index was built with a different checkpoint "
            f"({index.checkpoint_hash[:12]} vs {encoder.checkpoint_hash[:12]})"
        )

    app = FastAPI(title="dermalign retrieval service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def _run_query(vector: np.ndarray, k: int, modality_filter: Optional[str]) -> dict:
        try:
            results = query_index(index, vector, k, modality_filter)
        except IndexError_ as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"results": results}

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "index_size": len(index),
            "checkpoint_hash": index.checkpoint_hash,
        }

    @app.post("/query/text")
    def query_text(body: TextQuery) -> dict:
        if not body.text or not body.text.strip():
            raise HTTPException(status_code=422, detail="empty query text")
        vector = encoder.encode_text(body.text)
        return _run_query(vector, body.k, body.filter)

    @app.post("/query/image")
    async def query_image(
        image: UploadFile = File(...),
        k: int = Form(10),
        filter: Optional[str] = Form(None),
    ) -> dict:
        data = await image.read()
        try:
            vector = encoder.encode_image_bytes(data)
        except Exception as exc:  # noqa: BLE001 - any undecodable upload is a 4xx
            raise HTTPException(status_code=422, detail=f"unencodable image: {exc}") from exc
        return _run_query(vector, k, filter)

    @app.post("/query/item")
    def query_item(body: ItemQuery) -> dict:
        try:
            i, _ = index.entry(body.id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {body.id!r}")
        return _run_query(index.vectors[i], body.k, body.filter)

    @app.get("/item/{item_id}")
    def item(item_id: str) -> dict:
        try:
            i, meta = index.entry(item_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id!r}")
        payload = {"id": item_id, "modality": index.modalities[i], **meta}
        if index.modalities[i] == "text":
            payload["note_text"] = meta["preview"]
        elif cache_dir is not None:
            png = Path(cache_dir) / f"{meta['sample_id']}.png"
            if png.exists():
                payload["image_b64"] = base64.b64encode(png.read_bytes()).decode("ascii")
        return payload

    return app
