"""Training loop: balanced streams, augmentation, the five-term objective.

One process owns one training run. The run is a pure function of
(corpus, notes, config): parameter init, stream order, augmentation draws and
optimizer state are all derived from the config seed, so repeated runs produce
byte-identical checkpoints. Model selection picks the epoch with the best
validation image-classification kappa.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import yaml

from .corpus import LABEL_CODES, Corpus, balanced_stream
from .evaluate import cohen_kappa
from .losses import LossWeights, composite, cosine_align, cross_entropy, l1_align, nt_xent
from .model import (
    ModelConfig,
    MultiModalModel,
    build_model,
    images_to_tensor,
    save_checkpoint,
    tokens_to_tensor,
)
from .notegen import ClinicalNote, notes_by_id
from .preprocess import (
    apply_augment,
    default_tokenizer,
    load_cached_image,
    sample_augment_params,
    sample_augment_seed,
)
from .utils import derive_seed


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    learning_rate: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    shared_dim: int = 128
    text_dim: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    include_intra_modal: bool = True
    strategy: str = "M"
    num_threads: int = 2
    # probability of augmenting a non-duplicated sample; duplicates from
    # oversampling are always fed augmented variants
    base_augment_prob: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise TrainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 2:
            raise TrainError("batch_size must be >= 2 (NT-Xent needs negatives)")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "shared_dim": self.shared_dim,
            "text_dim": self.text_dim,
            "weights": self.weights.to_dict(),
            "include_intra_modal": self.include_intra_modal,
            "strategy": self.strategy,
            "num_threads": self.num_threads,
            "base_augment_prob": self.base_augment_prob,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "weights" in obj:
            obj["weights"] = LossWeights.from_dict(obj["weights"])
        return cls(**obj)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = yaml.safe_load(fh) or {}
        return cls.from_dict(obj.get("train", obj))

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


def sweep_configs(base: TrainConfig, grid: dict[str, list]) -> list[TrainConfig]:
    """Cross-product of hyperparameter choices over a base config.

    Keys name TrainConfig fields; dotted keys like "weights.ntxent" address
    individual loss weights. Intended for offline grid searches; nothing in
    the pipeline runs a sweep automatically.
    """
    from itertools import product

    keys = sorted(grid)
    configs = []
    for combo in product(*(grid[k] for k in keys)):
        fields: dict = {}
        weight_fields: dict = {}
        for key, value in zip(keys, combo):
            if key.startswith("weights."):
                weight_fields[key.split(".", 1)[1]] = value
            else:
                fields[key] = value
        if weight_fields:
            fields["weights"] = LossWeights(**{**base.weights.to_dict(), **weight_fields})
        configs.append(replace(base, **fields))
    return configs


def _load_split_images(corpus: Corpus, split: str, cache_dir: str | Path) -> dict[str, np.ndarray]:
    return {rec.id: load_cached_image(cache_dir, rec.id) for rec in corpus.split_records(split)}


def _label_tensor(labels: list[str]) -> torch.Tensor:
    return torch.tensor([LABEL_CODES.index(lab) for lab in labels], dtype=torch.long)


def _validation_kappa(
    model: MultiModalModel, corpus: Corpus, val_images: dict[str, np.ndarray]
) -> float:
    records = corpus.split_records("val")
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(records), 64):
            batch = records[start : start + 64]
            x = images_to_tensor(np.stack([val_images[r.id] for r in batch]))
            logits = model.classify(model.encode_image(x))
            preds.extend(LABEL_CODES[i] for i in logits.argmax(dim=1).tolist())
    return cohen_kappa([r.label for r in records], preds)


def train(
    corpus: Corpus,
    notes: list[ClinicalNote],
    config: TrainConfig,
    cache_dir: str | Path,
    out_path: Optional[str | Path] = None,
    image_only: bool = False,
) -> tuple[MultiModalModel, dict]:
    """Train a model on the corpus train split; returns (model, checkpoint meta).

    With `image_only` the text branch and alignment losses are dropped and the
    model optimizes only the image cross-entropy (the unimodal baseline).
    """
    torch.set_num_threads(config.num_threads)
    tokenizer = default_tokenizer()

    note_map = notes_by_id(notes) if not image_only else {}
    if not image_only:
        wrong = {n.strategy for n in notes} - {config.strategy}
        if wrong:
            raise TrainError(
                f"notes of strategies {sorted(wrong)} do not match config strategy "
                f"{config.strategy!r}"
            )
        missing = [r.id for r in corpus.split_records("train") if r.id not in note_map]
        if missing:
            raise TrainError(f"missing notes for train records: {missing[:10]}")

    train_images = _load_split_images(corpus, "train", cache_dir)
    val_images = _load_split_images(corpus, "val", cache_dir)
    token_cache = (
        {rid: tokenizer.tokenize(note.text) for rid, note in note_map.items()}
        if not image_only
        else {}
    )

    model_config = ModelConfig(
        model_type="image_only" if image_only else "multimodal",
        shared_dim=config.shared_dim,
        text_dim=config.text_dim,
        vocab_size=0 if image_only else len(tokenizer),
    )
    model = build_model(model_config, derive_seed(config.seed, "model-init"))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    history = []
    best_kappa = -float("inf")
    best_epoch = -1
    best_state: Optional[dict] = None

    for epoch in range(config.epochs):
        window = balanced_stream(corpus, derive_seed(config.seed, "stream", epoch))
        model.train()
        losses = []
        for start in range(0, len(window), config.batch_size):
            chunk = window[start : start + config.batch_size]
            if len(chunk) < 2:
                continue  # NT-Xent needs at least one negative
            images = []
            for position, (rec, is_dup) in enumerate(chunk, start=start):
                img = train_images[rec.id]
                rng = np.random.default_rng(
                    sample_augment_seed(config.seed, rec.id, epoch, position)
                )
                if is_dup or rng.random() < config.base_augment_prob:
                    img = apply_augment(img, sample_augment_params(rng))
                images.append(img)
            x = images_to_tensor(np.stack(images))
            labels = _label_tensor([rec.label for rec, _ in chunk])

            optimizer.zero_grad(set_to_none=True)
            z_img = model.encode_image(x)
            logits_img = model.classify(z_img)
            if image_only:
                loss = cross_entropy(logits_img, labels)
            else:
                ids, mask = tokens_to_tensor(
                    [token_cache[rec.id] for rec, _ in chunk], pad_id=tokenizer.pad_id
                )
                z_txt = model.encode_text(ids, mask)
                logits_txt = model.classify(z_txt)
                loss = composite(
                    ce_img=cross_entropy(logits_img, labels),
                    ce_txt=cross_entropy(logits_txt, labels),
                    l1=l1_align(z_img, z_txt),
                    cos=cosine_align(z_img, z_txt),
                    ntxent=nt_xent(
                        z_img,
                        z_txt,
                        temperature=config.weights.temperature,
                        include_intra_modal=config.include_intra_modal,
                    ),
                    weights=config.weights,
                )
            if not torch.isfinite(loss):
                raise TrainError(
                    f"non-finite loss at epoch {epoch} step {start // config.batch_size}"
                )
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))

        val_kappa = _validation_kappa(model, corpus, val_images)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_kappa": val_kappa}
        )
        # ties resolve to the later epoch: kappa saturates early on easy data
        # while the alignment terms keep improving
        if val_kappa >= best_kappa:
            best_kappa = val_kappa
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    assert best_state is not None
    model.load_state_dict(best_state)
    model.eval()

    meta = {
        "config": config.to_dict(),
        "strategy": None if image_only else config.strategy,
        "vocab_hash": tokenizer.vocab_hash,
        "best_epoch": best_epoch,
        "best_val_kappa": best_kappa,
        "history": history,
        "label_codes": list(LABEL_CODES),
    }
    if out_path is not None:
        save_checkpoint(model, meta, out_path)
    return model, meta


def train_image_only(
    corpus: Corpus,
    config: TrainConfig,
    cache_dir: str | Path,
    out_path: Optional[str | Path] = None,
) -> tuple[MultiModalModel, dict]:
    """Unimodal baseline: image branch and classifier only, CE loss only."""
    return train(corpus, [], config, cache_dir, out_path, image_only=True)
