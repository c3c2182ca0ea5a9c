"""Open-set identification against a one-anchor-per-identity gallery.

A query is embedded once and compared to every anchor embedding; the nearest
identity wins if its distance is within the threshold (inclusive), otherwise
the verdict is UNKNOWN. Ties break toward the lexicographically smallest
identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import ImageRecord
from .errors import ReidError
from .model import EMBEDDING_DIM, EmbeddingNetwork, embed, pairwise_distance
from .sampling import load_image

UNKNOWN = "UNKNOWN"
DEFAULT_THRESHOLD = 0.4


class DuplicateIdentity(ReidError):
    """Two anchors were supplied for the same identity."""


class EmptyAnchors(ReidError):
    """Gallery construction needs at least one anchor."""


@dataclass(frozen=True)
class GalleryEntry:
    anchor_path: Path
    embedding: np.ndarray


@dataclass(frozen=True)
class Gallery:
    """Immutable map of identity -> (anchor path, cached anchor embedding)."""

    entries: dict[str, GalleryEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def identities(self) -> list[str]:
        return sorted(self.entries)


@dataclass(frozen=True)
class MatchResult:
    verdict: str  # an identity_id, or UNKNOWN
    distances: dict[str, float]
    threshold: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "distances": {k: self.distances[k] for k in sorted(self.distances)},
            "threshold": self.threshold,
        }


def select_anchors(
    records: list[ImageRecord] | tuple[ImageRecord, ...], seed: int | None = None
) -> list[ImageRecord]:
    """Pick one anchor record per identity from a (train) split.

    Default policy takes each identity's first record (ordered by view then
    index); passing a seed draws uniformly instead.
    """
    groups: dict[str, list[ImageRecord]] = {}
    for r in records:
        groups.setdefault(r.identity_id, []).append(r)
    rng = np.random.default_rng(seed) if seed is not None else None
    anchors = []
    for identity in sorted(groups):
        candidates = sorted(groups[identity], key=lambda r: (r.view.value, r.index))
        if rng is None:
            anchors.append(candidates[0])
        else:
            anchors.append(candidates[int(rng.integers(len(candidates)))])
    return anchors


def build_gallery(network: EmbeddingNetwork, anchors: list[ImageRecord]) -> Gallery:
    """Embed one anchor per identity and cache the vectors."""
    if not anchors:
        raise EmptyAnchors("no anchor records supplied")
    entries: dict[str, GalleryEntry] = {}
    for record in anchors:
        if record.identity_id in entries:
            raise DuplicateIdentity(f"two anchors for identity {record.identity_id!r}")
        vector = embed(network, load_image(record))
        entries[record.identity_id] = GalleryEntry(
            anchor_path=record.path, embedding=vector
        )
    return Gallery(entries={k: entries[k] for k in sorted(entries)})


def match_embedding(
    gallery: Gallery, query: np.ndarray, threshold: float = DEFAULT_THRESHOLD
) -> MatchResult:
    """Match a precomputed query embedding against the gallery.

    The verdict is the argmin identity when the minimum distance is <= the
    threshold, else UNKNOWN; iterating identities in sorted order with a
    strict comparison makes ties land on the smallest identity_id.
    """
    if not gallery.entries:
        raise EmptyAnchors("gallery is empty")
    distances: dict[str, float] = {}
    best_identity: str | None = None
    best_distance = float("inf")
    for identity in sorted(gallery.entries):
        d = pairwise_distance(query, gallery.entries[identity].embedding)
        distances[identity] = d
        if d < best_distance:
            best_identity = identity
            best_distance = d
    verdict = best_identity if best_distance <= threshold else UNKNOWN
    return MatchResult(verdict=verdict, distances=distances, threshold=threshold)


def identify(
    network: EmbeddingNetwork,
    gallery: Gallery,
    query: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
) -> MatchResult:
    """Embed a query image and match it against the gallery."""
    return match_embedding(gallery, embed(network, query), threshold)


def save_gallery(gallery: Gallery, path: Path | str) -> None:
    """Export anchors and embeddings as JSON for inference without re-embedding."""
    payload = {
        identity: {
            "anchor_path": str(entry.anchor_path),
            "embedding": [float(x) for x in entry.embedding],
        }
        for identity, entry in gallery.entries.items()
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_gallery(path: Path | str) -> Gallery:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if not payload:
        raise EmptyAnchors(f"gallery file {path} has no entries")
    entries = {}
    for identity, item in payload.items():
        vector = np.asarray(item["embedding"], dtype=np.float32)
        if vector.shape != (EMBEDDING_DIM,):
            raise ReidError(
                f"gallery entry {identity!r} has embedding shape {vector.shape}, "
                f"expected ({EMBEDDING_DIM},)"
            )
        entries[identity] = GalleryEntry(
            anchor_path=Path(item["anchor_path"]), embedding=vector
        )
    return Gallery(entries={k: entries[k] for k in sorted(entries)})
