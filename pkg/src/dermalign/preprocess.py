"""Image and text preprocessing: lesion-region extraction, augmentation, tokenization.

All operations are pure given (input, seed). Batch preprocessing derives
per-sample seeds from (global_seed, sample_id) so worker count or ordering
never changes outputs. Preprocessed images are always 224x224x3 uint8.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .corpus import Corpus, SampleRecord
from .utils import derive_seed, sha256_text

IMAGE_SIZE = 224
MAX_TOKENS = 512
# Margin added around the detected mask bbox before cropping, as a fraction of
# the bbox side length (the surrounding context, not just the mask itself).
CROP_MARGIN = 0.10
# Foreground fractions outside this band mean Otsu found no usable bimodality.
DEGENERATE_LOW = 0.01
DEGENERATE_HIGH = 0.99


class PreprocessError(ValueError):
    pass


# ---------------------------------------------------------------------------
# image ops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CropResult:
    """224x224x3 crop plus provenance of how it was obtained."""

    image: np.ndarray
    mask_bbox: Optional[tuple[int, int, int, int]]  # (x, y, w, h) pre-margin
    fallback: bool


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PreprocessError(f"expected HxWx3 image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise PreprocessError(f"expected uint8 pixels, got {arr.dtype}")
    return arr


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 grayscale, rounded to uint8."""
    arr = _check_image(image).astype(np.float64)
    gray = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return np.clip(np.round(gray), 0, 255).astype(np.uint8)


def otsu_threshold(gray: np.ndarray) -> int:
    """Threshold maximizing between-class variance; class 0 = pixels <= t."""
    hist = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    p = hist / total
    omega = np.cumsum(p)  # weight of class 0 for t = 0..255
    mu = np.cumsum(p * np.arange(256))
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = 0.0
    return int(np.argmax(sigma_b))


def resize_to_input(image: np.ndarray) -> np.ndarray:
    """Bilinear resize to the 224x224 network input size."""
    arr = _check_image(image)
    pil = Image.fromarray(arr).resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
    return np.asarray(pil, dtype=np.uint8)


def _mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def otsu_crop(image: np.ndarray) -> CropResult:
    """Crop the lesion region found by Otsu thresholding, then resize.

    The foreground is the darker class (lesions are darker than surrounding
    skin in dermoscopy). A 10% margin is added around the tight mask bbox
    before cropping. Degenerate masks (foreground below 1% or above 99% of
    pixels) fall back to a full-image resize with the fallback flag set.
    """
    arr = _check_image(image)
    gray = luminance(arr)
    t = otsu_threshold(gray)
    mask = gray <= t
    frac = float(mask.mean())
    if frac < DEGENERATE_LOW or frac > DEGENERATE_HIGH:
        return CropResult(image=resize_to_input(arr), mask_bbox=None, fallback=True)
    x, y, w, h = _mask_bbox(mask)
    mx = int(round(CROP_MARGIN * w))
    my = int(round(CROP_MARGIN * h))
    height, width = arr.shape[:2]
    x0 = max(0, x - mx)
    y0 = max(0, y - my)
    x1 = min(width, x + w + mx)
    y1 = min(height, y + h + my)
    crop = arr[y0:y1, x0:x1]
    return CropResult(image=resize_to_input(crop), mask_bbox=(x, y, w, h), fallback=False)


def bbox_crop(image: np.ndarray, bbox: Optional[tuple[int, int, int, int]]) -> CropResult:
    """Crop a manually annotated box, then resize; missing boxes fall back."""
    arr = _check_image(image)
    if bbox is None:
        warnings.warn("missing bounding box; falling back to full-image resize")
        return CropResult(image=resize_to_input(arr), mask_bbox=None, fallback=True)
    x, y, w, h = bbox
    height, width = arr.shape[:2]
    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > width or y + h > height:
        raise PreprocessError(
            f"bbox {bbox} outside image bounds {width}x{height}"
        )
    crop = arr[y : y + h, x : x + w]
    return CropResult(image=resize_to_input(crop), mask_bbox=bbox, fallback=False)


def crop_record(image: np.ndarray, record: SampleRecord) -> CropResult:
    """Route one record through the crop matching its image type."""
    if record.image_type == "dermoscopic":
        return otsu_crop(image)
    return bbox_crop(image, record.bbox)


@dataclass(frozen=True)
class AugmentParams:
    """One sampled augmentation: 90-degree rotations, small-angle rotation,
    flips, and bounded per-channel intensity shifts."""

    quarter_turns: int = 0
    angle: float = 0.0  # degrees, |angle| <= 15
    hflip: bool = False
    vflip: bool = False
    rgb_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)  # additive, 8-bit scale

    def is_identity(self) -> bool:
        return (
            self.quarter_turns == 0
            and self.angle == 0.0
            and not self.hflip
            and not self.vflip
            and all(s == 0.0 for s in self.rgb_shift)
        )


MAX_SMALL_ANGLE = 15.0
MAX_RGB_SHIFT = 0.10 * 255.0


def sample_augment_params(seed: int | np.random.Generator) -> AugmentParams:
    rng = np.random.default_rng(seed)
    quarter_turns = int(rng.integers(4))
    angle = float(rng.uniform(-MAX_SMALL_ANGLE, MAX_SMALL_ANGLE)) if rng.random() < 0.5 else 0.0
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    rgb_shift = tuple(float(v) for v in rng.uniform(-MAX_RGB_SHIFT, MAX_RGB_SHIFT, size=3))
    return AugmentParams(quarter_turns, angle, hflip, vflip, rgb_shift)


def apply_augment(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    arr = _check_image(image)
    if arr.shape[0] != IMAGE_SIZE or arr.shape[1] != IMAGE_SIZE:
        raise PreprocessError(f"augment expects a {IMAGE_SIZE}x{IMAGE_SIZE} input")
    out = arr
    if params.quarter_turns % 4:
        out = np.rot90(out, k=params.quarter_turns % 4)
    if params.angle != 0.0:
        out = ndimage.rotate(
            out, params.angle, axes=(1, 0), reshape=False, order=1, mode="reflect"
        )
    if params.hflip:
        out = out[:, ::-1]
    if params.vflip:
        out = out[::-1, :]
    if any(s != 0.0 for s in params.rgb_shift):
        shifted = out.astype(np.float32) + np.asarray(params.rgb_shift, dtype=np.float32)
        out = np.clip(np.round(shifted), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(out)


def augment(image: np.ndarray, seed: int) -> np.ndarray:
    """Seeded random augmentation; output stays 224x224x3 uint8."""
    return apply_augment(image, sample_augment_params(seed))


# ---------------------------------------------------------------------------
# text tokenization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenSequence:
    """Token ids bracketed by [CLS]/[SEP]; position 0 summarizes the sequence."""

    ids: tuple[int, ...]
    truncated: bool
    summary_index: int = 0

    def __len__(self) -> int:
        return len(self.ids)


def _load_default_vocab() -> list[str]:
    data = resources.files("dermalign").joinpath("data/vocab.txt").read_text("utf-8")
    return data.splitlines()


class WordPieceTokenizer:
    """Greedy longest-match-first subword tokenizer over the fixture vocabulary."""

    def __init__(self, vocab: Optional[list[str]] = None, max_len: int = MAX_TOKENS):
        self.vocab = list(vocab) if vocab is not None else _load_default_vocab()
        self.token_to_id = {tok: i for i, tok in enumerate(self.vocab)}
        self.max_len = max_len
        self.pad_id = self.token_to_id["[PAD]"]
        self.unk_id = self.token_to_id["[UNK]"]
        self.cls_id = self.token_to_id["[CLS]"]
        self.sep_id = self.token_to_id["[SEP]"]
        self.vocab_hash = sha256_text("\n".join(self.vocab))

    def __len__(self) -> int:
        return len(self.vocab)

    def _basic_tokens(self, text: str) -> list[str]:
        tokens: list[str] = []
        word = []
        for ch in text.lower():
            if ch.isspace():
                if word:
                    tokens.append("".join(word))
                    word = []
            elif not ch.isalnum():
                if word:
                    tokens.append("".join(word))
                    word = []
                tokens.append(ch)
            else:
                word.append(ch)
        if word:
            tokens.append("".join(word))
        return tokens

    def _wordpiece(self, token: str) -> list[int]:
        pieces: list[int] = []
        start = 0
        while start < len(token):
            end = len(token)
            piece_id = None
            while end > start:
                piece = token[start:end]
                if start > 0:
                    piece = "##" + piece
                found = self.token_to_id.get(piece)
                if found is not None:
                    piece_id = found
                    break
                end -= 1
            if piece_id is None:
                return [self.unk_id]  # whole word unknown
            pieces.append(piece_id)
            start = end
        return pieces

    def tokenize(self, text: str) -> TokenSequence:
        """Deterministic subword segmentation with truncation to max_len."""
        if not text or not text.strip():
            raise PreprocessError("cannot tokenize empty text")
        ids: list[int] = []
        for token in self._basic_tokens(text):
            ids.extend(self._wordpiece(token))
        budget = self.max_len - 2  # room for [CLS] and [SEP]
        truncated = len(ids) > budget
        if truncated:
            ids = ids[:budget]
        return TokenSequence(
            ids=tuple([self.cls_id] + ids + [self.sep_id]),
            truncated=truncated,
            summary_index=0,
        )


_default_tokenizer: Optional[WordPieceTokenizer] = None


def default_tokenizer() -> WordPieceTokenizer:
    global _default_tokenizer
    if _default_tokenizer is None:
        _default_tokenizer = WordPieceTokenizer()
    return _default_tokenizer


# ---------------------------------------------------------------------------
# corpus-level cache
# ---------------------------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def resolve_image_path(record: SampleRecord, root: Path) -> Path:
    ref = Path(record.image_ref)
    return ref if ref.is_absolute() else root / ref


def preprocess_corpus(
    corpus: Corpus,
    out_dir: str | Path,
    root: Optional[str | Path] = None,
    note_texts: Optional[dict[str, str]] = None,
) -> list[dict]:
    """Crop and resize every record into a cache directory.

    Writes one PNG per sample id plus a line-delimited sidecar index recording
    fallback flags and detected bboxes; when note texts are supplied the
    sidecar also records each note's token-truncation flag. Returns the
    index entries.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if root is None:
        root = Path(corpus.manifest_path).parent if corpus.manifest_path else Path(".")
    root = Path(root)
    tokenizer = default_tokenizer() if note_texts else None
    entries = []
    for rec in sorted(corpus.records, key=lambda r: r.id):
        image = load_image(resolve_image_path(rec, root))
        result = crop_record(image, rec)
        Image.fromarray(result.image).save(out_dir / f"{rec.id}.png")
        entry = {
            "id": rec.id,
            "fallback": result.fallback,
            "mask_bbox": list(result.mask_bbox) if result.mask_bbox else None,
            "source_size": [int(image.shape[1]), int(image.shape[0])],
        }
        if note_texts is not None and rec.id in note_texts:
            entry["truncated"] = tokenizer.tokenize(note_texts[rec.id]).truncated
        entries.append(entry)
    with open(out_dir / "index.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
    return entries


def load_cached_image(cache_dir: str | Path, sample_id: str) -> np.ndarray:
    path = Path(cache_dir) / f"{sample_id}.png"
    if not path.exists():
        raise PreprocessError(f"no cached image for sample {sample_id!r} in {cache_dir}")
    arr = load_image(path)
    if arr.shape[:2] != (IMAGE_SIZE, IMAGE_SIZE):
        raise PreprocessError(f"cached image for {sample_id!r} is not {IMAGE_SIZE}x{IMAGE_SIZE}")
    return arr


def sample_augment_seed(global_seed: int, sample_id: str, epoch: int, position: int) -> int:
    """Per-sample augmentation seed; independent of worker count and order."""
    return derive_seed(global_seed, "augment", sample_id, epoch, position)
