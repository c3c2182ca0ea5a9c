"""Contrastive and triplet training objectives.

Contrastive (same pair: d^2, different pair: max(margin - d, 0)^2) follows
the classic margin-based formulation; triplet is the standard hinge
max(d_ap - d_an + margin, 0). Scalar forms operate on plain floats; the
torch forms are the batched criteria used in training, with the batch loss
defined as the mean over samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ReidError

CONTRASTIVE_DEFAULT_MARGIN = 1.0
TRIPLET_DEFAULT_MARGIN = 0.5

# Keeps sqrt differentiable at zero distance.
_DIST_EPS = 1e-12


class InvalidMargin(ReidError):
    """Loss margin must be strictly positive."""


@dataclass(frozen=True)
class LossConfig:
    kind: str  # "contrastive" or "triplet"
    margin: float | None = None

    def __post_init__(self):
        if self.kind not in ("contrastive", "triplet"):
            raise ValueError(f"unknown loss kind: {self.kind!r}")
        if self.margin is None:
            default = (
                CONTRASTIVE_DEFAULT_MARGIN
                if self.kind == "contrastive"
                else TRIPLET_DEFAULT_MARGIN
            )
            object.__setattr__(self, "margin", default)
        if self.margin <= 0:
            raise InvalidMargin(f"margin must be > 0, got {self.margin}")


def _check_margin(margin: float) -> None:
    if margin <= 0:
        raise InvalidMargin(f"margin must be > 0, got {margin}")


def contrastive_loss(distance: float, same: bool, margin: float) -> float:
    """Per-pair contrastive loss: d^2 for same pairs, hinge^2 for different."""
    _check_margin(margin)
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    if same:
        return distance * distance
    return max(margin - distance, 0.0) ** 2


def triplet_loss(d_ap: float, d_an: float, margin: float) -> float:
    """Per-triplet hinge loss: max(d_ap - d_an + margin, 0)."""
    _check_margin(margin)
    if d_ap < 0 or d_an < 0:
        raise ValueError("distances must be >= 0")
    return max(d_ap - d_an + margin, 0.0)


def embedding_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise Euclidean distances between two embedding batches."""
    return (a - b).pow(2).sum(dim=1).clamp_min(_DIST_EPS).sqrt()


def contrastive_from_distances(
    distances: torch.Tensor, same: torch.Tensor, margin: float
) -> torch.Tensor:
    """Mean contrastive loss over a batch of pair distances and 0/1 labels."""
    _check_margin(margin)
    pos = same * distances.pow(2)
    neg = (1.0 - same) * (margin - distances).clamp_min(0.0).pow(2)
    return (pos + neg).mean()


def triplet_from_distances(
    d_ap: torch.Tensor, d_an: torch.Tensor, margin: float
) -> torch.Tensor:
    """Mean triplet loss over batches of anchor-pos / anchor-neg distances."""
    _check_margin(margin)
    return (d_ap - d_an + margin).clamp_min(0.0).mean()


def contrastive_from_embeddings(
    left: torch.Tensor, right: torch.Tensor, same: torch.Tensor, margin: float
) -> torch.Tensor:
    return contrastive_from_distances(embedding_distances(left, right), same, margin)


def triplet_from_embeddings(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negative: torch.Tensor,
    margin: float,
) -> torch.Tensor:
    return triplet_from_distances(
        embedding_distances(anchor, positive),
        embedding_distances(anchor, negative),
        margin,
    )
