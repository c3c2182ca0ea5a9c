"""Image loading, pair/triplet sampling, and the augmentation recipe.

Images are decoded to 150x150x3 float32 tensors in [0, 1]. Pair and triplet
generation is seeded and deterministic; augmentation is applied offline by
doubling the sample list (originals followed by augmented copies).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .catalog import ImageRecord
from .errors import ReidError
from .seeding import derive_seed

log = logging.getLogger(__name__)

IMAGE_SIZE = 150
ROTATION_MAX_DEGREES = 20.0
# Additive Gaussian noise scale of 0.05*255 on 8-bit pixels, in [0,1] units.
NOISE_SIGMA = 0.05

# Bounded retries before falling back to a linear scan of candidates.
_MAX_DRAWS = 16


class SingleIdentity(ReidError):
    """Negative pairs/triplets cannot be formed from one identity."""


class DecodeFailure(ReidError):
    """An image file could not be decoded."""

    def __init__(self, path, cause: Exception):
        super().__init__(f"cannot decode image {path}: {cause}")
        self.path = path


class AugmentationKind(str, Enum):
    NONE = "none"
    FLIP = "flip"
    ROTATE = "rotate"
    NOISE = "noise"


@dataclass(frozen=True)
class PairSample:
    left: ImageRecord
    right: ImageRecord
    same: bool

    def __post_init__(self):
        if self.same != (self.left.identity_id == self.right.identity_id):
            raise ValueError("same flag inconsistent with identities")
        if self.left.path == self.right.path:
            raise ValueError("pair must use two distinct files")


@dataclass(frozen=True)
class TripletSample:
    anchor: ImageRecord
    positive: ImageRecord
    negative: ImageRecord

    def __post_init__(self):
        if self.anchor.identity_id != self.positive.identity_id:
            raise ValueError("anchor and positive must share an identity")
        if self.anchor.identity_id == self.negative.identity_id:
            raise ValueError("negative must come from a different identity")
        if self.anchor.path == self.positive.path:
            raise ValueError("anchor and positive must be distinct files")


def check_pixel_tensor(image: np.ndarray) -> None:
    """Raise ValueError unless ``image`` is a valid 150x150x3 [0,1] tensor."""
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ValueError(f"expected {(IMAGE_SIZE, IMAGE_SIZE, 3)} tensor, got {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("pixel tensor contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values outside [0, 1]")


def load_image_file(path) -> np.ndarray:
    """Decode to RGB, resize to 150x150 (bilinear, stretching), scale to [0,1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize(
                (IMAGE_SIZE, IMAGE_SIZE), Image.Resampling.BILINEAR
            )
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeFailure(path, exc) from exc
    return np.asarray(rgb, dtype=np.float32) / 255.0


def load_image(record: ImageRecord) -> np.ndarray:
    return load_image_file(record.path)


def _group_by_identity(split) -> dict[str, list[ImageRecord]]:
    groups: dict[str, list[ImageRecord]] = {}
    for r in split:
        groups.setdefault(r.identity_id, []).append(r)
    return groups


def _pick(
    candidates: list[ImageRecord],
    rng: np.random.Generator,
    used: set,
    key,
) -> ImageRecord:
    """Seeded draw avoiding already-used keys; falls back to a linear scan.

    When every candidate is exhausted the draw is allowed to repeat; with
    sensibly sized identity groups this never triggers.
    """
    for _ in range(_MAX_DRAWS):
        cand = candidates[int(rng.integers(len(candidates)))]
        if key(cand) not in used:
            return cand
    for cand in candidates:
        if key(cand) not in used:
            return cand
    return candidates[int(rng.integers(len(candidates)))]


def make_pairs(
    split: list[ImageRecord] | tuple[ImageRecord, ...],
    pairs_per_record: int,
    seed: int,
) -> list[PairSample]:
    """Generate len(split) * pairs_per_record labelled pairs, balanced 1:1.

    Each record serves as the left element of ``pairs_per_record`` pairs whose
    same/different labels alternate globally, so even totals are exactly
    balanced. Identical (left, right) combinations are avoided while unused
    partners remain. A record whose identity has no second image falls back to
    a different-identity pair.
    """
    if pairs_per_record < 1:
        raise ValueError("pairs_per_record must be >= 1")
    groups = _group_by_identity(split)
    if len(groups) < 2:
        raise SingleIdentity("need at least 2 identities to form negative pairs")

    rng = np.random.default_rng(seed)
    used: set[tuple] = set()
    pairs: list[PairSample] = []
    slot = 0
    for left in split:
        same_pool = [r for r in groups[left.identity_id] if r.path != left.path]
        diff_pool = [r for r in split if r.identity_id != left.identity_id]
        for _ in range(pairs_per_record):
            want_same = slot % 2 == 0 and bool(same_pool)
            pool = same_pool if want_same else diff_pool
            right = _pick(pool, rng, used, key=lambda r: (left.path, r.path))
            used.add((left.path, right.path))
            pairs.append(PairSample(left=left, right=right, same=want_same))
            slot += 1
    return pairs


def make_triplets(
    split: list[ImageRecord] | tuple[ImageRecord, ...],
    triplets_per_record: int,
    seed: int,
) -> list[TripletSample]:
    """Generate up to len(split) * triplets_per_record anchor/pos/neg triplets.

    Records whose identity has no second image cannot anchor a triplet and are
    skipped.
    """
    if triplets_per_record < 1:
        raise ValueError("triplets_per_record must be >= 1")
    groups = _group_by_identity(split)
    if len(groups) < 2:
        raise SingleIdentity("need at least 2 identities to form triplets")

    rng = np.random.default_rng(seed)
    used: set[tuple] = set()
    triplets: list[TripletSample] = []
    for anchor in split:
        pos_pool = [r for r in groups[anchor.identity_id] if r.path != anchor.path]
        if not pos_pool:
            continue
        neg_pool = [r for r in split if r.identity_id != anchor.identity_id]
        for _ in range(triplets_per_record):
            positive = _pick(pos_pool, rng, used, key=lambda r: (anchor.path, r.path))
            negative = neg_pool[int(rng.integers(len(neg_pool)))]
            used.add((anchor.path, positive.path))
            triplets.append(
                TripletSample(anchor=anchor, positive=positive, negative=negative)
            )
    return triplets


def rotation_angle(seed: int) -> float:
    """Seeded uniform rotation angle in [-20, +20] degrees."""
    rng = np.random.default_rng(seed)
    return float(rng.uniform(-ROTATION_MAX_DEGREES, ROTATION_MAX_DEGREES))


def augment(image: np.ndarray, kind: AugmentationKind, seed: int) -> np.ndarray:
    """Apply one augmentation; the input tensor is never mutated.

    flip    horizontal mirror
    rotate  seeded uniform angle in [-20, 20] degrees about the center,
            bilinear resampling, black border fill
    noise   per-pixel additive Gaussian (sigma 0.05), clamped to [0, 1]
    none    identity
    """
    kind = AugmentationKind(kind)
    if kind is AugmentationKind.NONE:
        return image.copy()
    if kind is AugmentationKind.FLIP:
        return image[:, ::-1, :].copy()
    if kind is AugmentationKind.ROTATE:
        angle = rotation_angle(seed)
        rotated = ndimage.rotate(
            image, angle, axes=(1, 0), reshape=False, order=1,
            mode="constant", cval=0.0,
        )
        return np.clip(rotated, 0.0, 1.0).astype(np.float32)
    if kind is AugmentationKind.NOISE:
        rng = np.random.default_rng(seed)
        noisy = image + rng.normal(0.0, NOISE_SIGMA, size=image.shape)
        return np.clip(noisy, 0.0, 1.0).astype(np.float32)
    raise ValueError(f"unknown augmentation kind: {kind}")


def expand_with_augmentation(
    samples: list[tuple], kind: AugmentationKind, seed: int
) -> list[tuple]:
    """Append an augmented copy of every sample (dataset doubling).

    Samples are tuples whose ndarray slots are images; non-array slots
    (labels) are passed through unchanged. Each image slot draws its own
    sub-seed, so e.g. the two sides of a pair rotate independently. With
    kind=none the input list is returned as a shallow copy.
    """
    kind = AugmentationKind(kind)
    if kind is AugmentationKind.NONE:
        return list(samples)
    augmented = []
    for i, sample in enumerate(samples):
        augmented.append(
            tuple(
                augment(x, kind, derive_seed(seed, i, j))
                if isinstance(x, np.ndarray)
                else x
                for j, x in enumerate(sample)
            )
        )
    return list(samples) + augmented


def load_pairs(pairs: list[PairSample]) -> list[tuple]:
    """Load pair tensors as (left, right, label) with label 1.0 for same.

    Tensors are cached per path, so records appearing in several pairs share
    one array.
    """
    cache: dict = {}

    def fetch(record: ImageRecord) -> np.ndarray:
        if record.path not in cache:
            cache[record.path] = load_image(record)
        return cache[record.path]

    return [(fetch(p.left), fetch(p.right), 1.0 if p.same else 0.0) for p in pairs]


def load_triplets(triplets: list[TripletSample]) -> list[tuple]:
    """Load triplet tensors as (anchor, positive, negative)."""
    cache: dict = {}

    def fetch(record: ImageRecord) -> np.ndarray:
        if record.path not in cache:
            cache[record.path] = load_image(record)
        return cache[record.path]

    return [(fetch(t.anchor), fetch(t.positive), fetch(t.negative)) for t in triplets]
