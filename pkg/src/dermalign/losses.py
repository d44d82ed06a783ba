"""Training objective: two cross-entropies plus three alignment terms.

    total = w_ce_img * CE(image logits) + w_ce_txt * CE(text logits)
          + w_l1 * L1(z_img, z_txt) + w_cos * (1 - cos(z_img, z_txt))
          + w_ntxent * NT-Xent(z_img, z_txt; tau)

L1 and cosine act sample-wise within the batch; NT-Xent contrasts each
embedding against the rest of the batch for global structure. Positives for
NT-Xent are the cross-modal pairs (image_i, text_i); by default the candidate
set also contains same-modality non-pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

_EPS = 1e-12


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    ce_img: float = 1.0
    ce_txt: float = 1.0
    l1: float = 1.0
    cos: float = 1.0
    ntxent: float = 0.5
    temperature: float = 0.5

    def __post_init__(self):
        for name in ("ce_img", "ce_txt", "l1", "cos", "ntxent", "temperature"):
            if getattr(self, name) <= 0:
                raise LossError(f"{name} must be > 0, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return {
            "ce_img": self.ce_img,
            "ce_txt": self.ce_txt,
            "l1": self.l1,
            "cos": self.cos,
            "ntxent": self.ntxent,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LossWeights":
        return cls(**{k: float(v) for k, v in obj.items()})


def cross_entropy(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Softmax cross-entropy, averaged over the batch. Accepts 1-D or 2-D scores."""
    if scores.dim() == 1:
        scores = scores.unsqueeze(0)
        labels = labels.reshape(1)
    if not torch.isfinite(scores).all():
        raise LossError("non-finite classifier scores")
    return F.cross_entropy(scores, labels)


def l1_align(z_img: torch.Tensor, z_txt: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference of paired embeddings, averaged over the batch."""
    if z_img.shape != z_txt.shape:
        raise LossError(f"embedding shape mismatch: {tuple(z_img.shape)} vs {tuple(z_txt.shape)}")
    return (z_img - z_txt).abs().mean()


def cosine_align(z_img: torch.Tensor, z_txt: torch.Tensor) -> torch.Tensor:
    """1 - cosine similarity of paired embeddings, averaged over the batch."""
    if z_img.shape != z_txt.shape:
        raise LossError(f"embedding shape mismatch: {tuple(z_img.shape)} vs {tuple(z_txt.shape)}")
    if z_img.dim() == 1:
        z_img = z_img.unsqueeze(0)
        z_txt = z_txt.unsqueeze(0)
    norms_i = z_img.norm(dim=1)
    norms_t = z_txt.norm(dim=1)
    if (norms_i < _EPS).any() or (norms_t < _EPS).any():
        raise LossError("cosine alignment is undefined for zero vectors")
    cos = (z_img * z_txt).sum(dim=1) / (norms_i * norms_t)
    return (1.0 - cos).mean()


def nt_xent(
    z_img: torch.Tensor,
    z_txt: torch.Tensor,
    temperature: float = 0.5,
    include_intra_modal: bool = True,
) -> torch.Tensor:
    """Symmetric cross-modal NT-Xent.

    Each of the 2N embeddings anchors one softmax over its candidates; the
    positive is its cross-modal pair. With `include_intra_modal` the
    candidates are all other 2N - 1 embeddings, otherwise only the N
    embeddings of the opposite modality. Averaged over all anchors.
    """
    if z_img.dim() != 2 or z_txt.dim() != 2 or z_img.shape != z_txt.shape:
        raise LossError("nt_xent expects two N x d matrices of equal shape")
    n = z_img.shape[0]
    if n < 2:
        raise LossError("nt_xent needs a batch of at least 2 (no negatives otherwise)")
    if temperature <= 0:
        raise LossError(f"temperature must be > 0, got {temperature}")

    zi = F.normalize(z_img, dim=1, eps=_EPS)
    zt = F.normalize(z_txt, dim=1, eps=_EPS)
    all_z = torch.cat([zi, zt], dim=0)  # images first, then texts
    sim = all_z @ all_z.t() / temperature  # (2N, 2N)

    positive = torch.arange(2 * n, device=sim.device)
    positive = (positive + n) % (2 * n)  # image_i <-> text_i

    if include_intra_modal:
        mask = torch.eye(2 * n, dtype=torch.bool, device=sim.device)  # exclude self only
    else:
        # Candidates restricted to the opposite modality; the positive is
        # always cross-modal so it survives the mask.
        mask = torch.zeros(2 * n, 2 * n, dtype=torch.bool, device=sim.device)
        mask[:n, :n] = True
        mask[n:, n:] = True
    logits = sim.masked_fill(mask, float("-inf"))
    return F.cross_entropy(logits, positive)


def composite(
    ce_img: torch.Tensor,
    ce_txt: torch.Tensor,
    l1: torch.Tensor,
    cos: torch.Tensor,
    ntxent: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted sum of the five components; rejects non-finite inputs by name."""
    parts = {"ce_img": ce_img, "ce_txt": ce_txt, "l1": l1, "cos": cos, "ntxent": ntxent}
    for name, value in parts.items():
        if not torch.isfinite(value).all():
            raise LossError(f"non-finite loss component: {name}")
    return (
        weights.ce_img * ce_img
        + weights.ce_txt * ce_txt
        + weights.l1 * l1
        + weights.cos * cos
        + weights.ntxent * ntxent
    )
