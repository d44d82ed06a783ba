"""Dual-branch architecture: modality encoders, shared projection, one classifier.

Both branches project into the same unit-normalized shared space and feed a
single classifier whose weights are byte-identical for images and text. The
desk-scale encoders (a 4-block CNN and a 2-layer transformer) implement the
same contract a larger pretrained pair would: fixed-length embeddings per
sample regardless of input size.

Checkpoints use a self-describing container (JSON header + raw little-endian
array payload) that serializes byte-identically for identical parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import LABEL_CODES
from .preprocess import IMAGE_SIZE, MAX_TOKENS, TokenSequence

N_CLASSES = len(LABEL_CODES)

_MAGIC = b"DMALIGN1"


class ModelError(ValueError):
    pass


# Encoder registries. Any module exposing `modality`, `output_dim`, and the
# matching forward signature plugs in here (e.g. a pretrained CNN or language
# model wrapped to return fixed-length embeddings); the desk-scale pair below
# is registered by default. Image factories take no arguments; text factories
# receive the ModelConfig (for vocab_size and text_dim).
_IMAGE_ENCODERS: dict[str, callable] = {}
_TEXT_ENCODERS: dict[str, callable] = {}


def register_image_encoder(name: str, factory) -> None:
    _IMAGE_ENCODERS[name] = factory


def register_text_encoder(name: str, factory) -> None:
    _TEXT_ENCODERS[name] = factory


def available_encoders() -> dict[str, list[str]]:
    return {"image": sorted(_IMAGE_ENCODERS), "text": sorted(_TEXT_ENCODERS)}


class SmallImageEncoder(nn.Module):
    """4 conv blocks with GroupNorm; global average pool to a fixed-length vector."""

    modality = "image"

    def __init__(self, channels: Sequence[int] = (16, 32, 64, 128)):
        super().__init__()
        blocks = []
        cin = 3
        for cout in channels:
            blocks += [
                nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(4, cout),
                nn.ReLU(inplace=True),
            ]
            cin = cout
        self.blocks = nn.Sequential(*blocks)
        self.output_dim = channels[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != IMAGE_SIZE or x.shape[3] != IMAGE_SIZE:
            raise ModelError(
                f"image encoder expects (N, 3, {IMAGE_SIZE}, {IMAGE_SIZE}), got {tuple(x.shape)}"
            )
        h = self.blocks(x)
        return h.mean(dim=(2, 3))


class TinyTextEncoder(nn.Module):
    """2-layer transformer over the fixture vocabulary; summary token at position 0."""

    modality = "text"

    def __init__(
        self,
        vocab_size: int,
        d_model: int = 64,
        n_layers: int = 2,
        n_heads: int = 4,
        ff_dim: int = 128,
        max_len: int = MAX_TOKENS,
        pad_id: int = 0,
    ):
        super().__init__()
        self.token_embedding = nn.Embedding(vocab_size, d_model)
        self.position_embedding = nn.Embedding(max_len, d_model)
        layer = nn.TransformerEncoderLayer(
            d_model, n_heads, ff_dim, dropout=0.0, batch_first=True
        )
        # nested-tensor fast path disabled: keeps numerics identical across
        # batch compositions and train/eval modes
        self.encoder = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)
        self.pad_id = pad_id
        self.max_len = max_len
        self.output_dim = d_model

    def forward(self, token_ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        if token_ids.dim() != 2:
            raise ModelError(f"text encoder expects (N, L) token ids, got {tuple(token_ids.shape)}")
        if token_ids.shape[1] > self.max_len:
            raise ModelError(f"sequence length {token_ids.shape[1]} exceeds {self.max_len}")
        if pad_mask is None:
            pad_mask = token_ids == self.pad_id
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        h = self.token_embedding(token_ids) + self.position_embedding(positions)
        h = self.encoder(h, src_key_padding_mask=pad_mask)
        return h[:, 0]  # final hidden state of the summary token


class ProjectionHead(nn.Module):
    """Affine map, cross-sample centering, tanh, renormalization to unit sphere.

    The BatchNorm keeps per-dimension variance pinned across the batch, so the
    head cannot satisfy the alignment losses by collapsing every sample onto
    one direction; alignment has to come from matching cluster structure.
    """

    def __init__(self, input_dim: int, shared_dim: int = 128):
        super().__init__()
        self.linear = nn.Linear(input_dim, shared_dim)
        self.norm = nn.BatchNorm1d(shared_dim)
        self.shared_dim = shared_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.normalize(torch.tanh(self.norm(self.linear(x))), dim=-1, eps=1e-12)


class SharedClassifier(nn.Module):
    """Single affine classifier applied to embeddings of either modality."""

    def __init__(self, shared_dim: int, n_classes: int = N_CLASSES):
        super().__init__()
        self.linear = nn.Linear(shared_dim, n_classes)
        self.shared_dim = shared_dim

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.shared_dim:
            raise ModelError(
                f"classifier expects embeddings of dim {self.shared_dim}, got {z.shape[-1]}"
            )
        return self.linear(z)


@dataclass(frozen=True)
class ModelConfig:
    model_type: str = "multimodal"  # or "image_only"
    shared_dim: int = 128
    image_encoder: str = "small-cnn"
    text_encoder: str = "tiny-transformer"
    vocab_size: int = 0
    text_dim: int = 64

    def to_dict(self) -> dict:
        return {
            "model_type": self.model_type,
            "shared_dim": self.shared_dim,
            "image_encoder": self.image_encoder,
            "text_encoder": self.text_encoder,
            "vocab_size": self.vocab_size,
            "text_dim": self.text_dim,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(
            model_type=obj["model_type"],
            shared_dim=int(obj["shared_dim"]),
            image_encoder=obj["image_encoder"],
            text_encoder=obj["text_encoder"],
            vocab_size=int(obj["vocab_size"]),
            text_dim=int(obj.get("text_dim", 64)),
        )


class MultiModalModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.image_encoder not in _IMAGE_ENCODERS:
            raise ModelError(
                f"unknown image encoder {config.image_encoder!r}; "
                f"registered: {sorted(_IMAGE_ENCODERS)}"
            )
        if config.model_type == "multimodal" and config.text_encoder not in _TEXT_ENCODERS:
            raise ModelError(
                f"unknown text encoder {config.text_encoder!r}; "
                f"registered: {sorted(_TEXT_ENCODERS)}"
            )
        self.config = config
        self.image_encoder = _IMAGE_ENCODERS[config.image_encoder]()
        self.image_head = ProjectionHead(self.image_encoder.output_dim, config.shared_dim)
        if config.model_type == "multimodal":
            if config.vocab_size <= 0:
                raise ModelError("multimodal model requires a positive vocab_size")
            self.text_encoder = _TEXT_ENCODERS[config.text_encoder](config)
            self.text_head = ProjectionHead(self.text_encoder.output_dim, config.shared_dim)
        else:
            self.text_encoder = None
            self.text_head = None
        self.classifier = SharedClassifier(config.shared_dim)

    @property
    def is_multimodal(self) -> bool:
        return self.config.model_type == "multimodal"

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        return self.image_head(self.image_encoder(x))

    def encode_text(self, token_ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        if not self.is_multimodal:
            raise ModelError("image-only model has no text branch")
        return self.text_head(self.text_encoder(token_ids, pad_mask))

    def classify(self, z: torch.Tensor) -> torch.Tensor:
        return self.classifier(z)


register_image_encoder("small-cnn", SmallImageEncoder)
register_text_encoder(
    "tiny-transformer",
    lambda config: TinyTextEncoder(config.vocab_size, d_model=config.text_dim),
)


def build_model(config: ModelConfig, seed: int) -> MultiModalModel:
    """Construct a model with seeded parameter initialization."""
    torch.manual_seed(seed)
    return MultiModalModel(config)


# ---------------------------------------------------------------------------
# batching helpers
# ---------------------------------------------------------------------------


def images_to_tensor(images: np.ndarray | Sequence[np.ndarray]) -> torch.Tensor:
    """uint8 (N,224,224,3) -> normalized float32 (N,3,224,224)."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if not arr.flags.writeable:  # PIL hands out read-only buffers
        arr = arr.copy()
    x = torch.from_numpy(np.ascontiguousarray(arr)).float().permute(0, 3, 1, 2)
    return (x / 255.0 - 0.5) / 0.25


def tokens_to_tensor(
    sequences: Sequence[TokenSequence], pad_id: int = 0
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a batch of token sequences; returns (ids, pad_mask)."""
    max_len = max(len(seq) for seq in sequences)
    ids = torch.full((len(sequences), max_len), pad_id, dtype=torch.long)
    mask = torch.ones((len(sequences), max_len), dtype=torch.bool)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = torch.tensor(seq.ids, dtype=torch.long)
        mask[i, : len(seq)] = False
    return ids, mask


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def _state_to_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {
        name: tensor.detach().cpu().numpy().astype("<f4", copy=True)
        if tensor.is_floating_point()
        else tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }


def write_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write the versioned container; identical content -> identical bytes."""
    specs = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        specs.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "nbytes": arr.nbytes}
        )
        payload.extend(arr.tobytes())
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": specs}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(header).to_bytes(8, "big"))
        fh.write(header)
        fh.write(bytes(payload))


def read_container(path: str | Path, expect_kind: Optional[str] = None) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ModelError(f"{path}: not a dermalign container")
        header_len = int.from_bytes(fh.read(8), "big")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if expect_kind is not None and header["kind"] != expect_kind:
            raise ModelError(f"{path}: expected kind {expect_kind!r}, found {header['kind']!r}")
        arrays = {}
        for spec in header["arrays"]:
            raw = fh.read(spec["nbytes"])
            arrays[spec["name"]] = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(
                spec["shape"]
            )
    return header, arrays


def save_checkpoint(model: MultiModalModel, meta: dict, path: str | Path) -> None:
    meta = dict(meta)
    meta["model_config"] = model.config.to_dict()
    write_container(path, "checkpoint", meta, _state_to_arrays(model))


def load_checkpoint(path: str | Path) -> tuple[MultiModalModel, dict]:
    """Reload a checkpoint to bit-identical inference behavior."""
    header, arrays = read_container(path, expect_kind="checkpoint")
    meta = header["meta"]
    config = ModelConfig.from_dict(meta["model_config"])
    model = MultiModalModel(config)
    state = {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta
