"""Dataset discovery, filtering, and leak-free stratified splitting.

The on-disk layout is one folder per identity, each with front/ and/or top/
subfolders of images:

    <root>/<identity>/front/*.jpg
    <root>/<identity>/top/*.jpg

All operations are pure functions over immutable records; scanning the same
tree twice yields identical catalogs, and splits are deterministic under a
fixed seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ReidError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png"}

TRAIN_FRACTION = 0.8
HOLDOUT_FRACTION = 0.2
# Both val and test must be non-empty, so the holdout never shrinks below 2.
MIN_HOLDOUT = 2


class MissingRoot(ReidError):
    """Dataset root directory does not exist."""


class EmptyDataset(ReidError):
    """No records survive scanning or filtering."""


class TooFewImages(ReidError):
    """An identity has too few records to be split."""

    def __init__(self, identity_id: str, count: int):
        super().__init__(
            f"identity {identity_id!r} has {count} records; need at least 3 to split"
        )
        self.identity_id = identity_id
        self.count = count


class View(str, Enum):
    FRONT = "front"
    TOP = "top"


class PhotoType(str, Enum):
    FRONT = "front"
    TOP = "top"
    ALL = "all"

    def admits(self, view: View) -> bool:
        return self is PhotoType.ALL or self.value == view.value


@dataclass(frozen=True, order=True)
class ImageRecord:
    """One image file bound to an identity and a view.

    ``index`` is the stable ordinal of the file within its identity+view
    group, assigned by lexicographic filename order.
    """

    identity_id: str
    view: View
    path: Path
    index: int


@dataclass(frozen=True)
class DatasetCatalog:
    records: tuple[ImageRecord, ...]
    photo_type: PhotoType = PhotoType.ALL

    @property
    def identities(self) -> frozenset[str]:
        return frozenset(r.identity_id for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def by_identity(self) -> dict[str, list[ImageRecord]]:
        groups: dict[str, list[ImageRecord]] = {}
        for r in self.records:
            groups.setdefault(r.identity_id, []).append(r)
        return groups


@dataclass(frozen=True)
class SplitManifest:
    """Disjoint train/val/test assignment of records."""

    train: tuple[ImageRecord, ...]
    val: tuple[ImageRecord, ...]
    test: tuple[ImageRecord, ...]
    seed: int
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    @property
    def records(self) -> tuple[ImageRecord, ...]:
        return self.train + self.val + self.test

    def identities(self) -> frozenset[str]:
        return frozenset(r.identity_id for r in self.records)


def scan_dataset(root: Path | str) -> DatasetCatalog:
    """Scan an identity-folder tree into a catalog (photo_type=all).

    Files with extensions outside IMAGE_EXTENSIONS are skipped with a logged
    warning. Indices are assigned per identity+view in lexicographic filename
    order, so repeated scans of the same tree are identical.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingRoot(f"dataset root not found: {root}")

    records: list[ImageRecord] = []
    for identity_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for view in (View.FRONT, View.TOP):
            view_dir = identity_dir / view.value
            if not view_dir.is_dir():
                continue
            index = 0
            for file in sorted(p for p in view_dir.iterdir() if p.is_file()):
                if file.suffix.lower() not in IMAGE_EXTENSIONS:
                    log.warning("skipping non-image file %s", file)
                    continue
                records.append(
                    ImageRecord(
                        identity_id=identity_dir.name,
                        view=view,
                        path=file,
                        index=index,
                    )
                )
                index += 1

    if not records:
        raise EmptyDataset(f"no images found under {root}")
    return DatasetCatalog(records=tuple(records), photo_type=PhotoType.ALL)


def select_view(catalog: DatasetCatalog, photo_type: PhotoType) -> DatasetCatalog:
    """Restrict the catalog to the requested view(s)."""
    photo_type = PhotoType(photo_type)
    if photo_type is PhotoType.ALL:
        return DatasetCatalog(records=catalog.records, photo_type=photo_type)
    kept = tuple(r for r in catalog.records if photo_type.admits(r.view))
    if not kept:
        raise EmptyDataset(f"no {photo_type.value!r} records in catalog")
    return DatasetCatalog(records=kept, photo_type=photo_type)


def filter_min_images(catalog: DatasetCatalog, min_count: int) -> DatasetCatalog:
    """Keep only identities with at least ``min_count`` matching records.

    Counting is over the records already in the catalog, i.e. it respects the
    catalog's current photo_type. Record order is preserved.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    for r in catalog.records:
        counts[r.identity_id] = counts.get(r.identity_id, 0) + 1
    surviving = {i for i, n in counts.items() if n >= min_count}
    if not surviving:
        raise EmptyDataset(f"no identity has >= {min_count} images")
    kept = tuple(r for r in catalog.records if r.identity_id in surviving)
    return DatasetCatalog(records=kept, photo_type=catalog.photo_type)


def holdout_size(n: int) -> int:
    """Holdout count for an identity with n records: round-half-up 20%, min 2."""
    return max(MIN_HOLDOUT, int(np.floor(HOLDOUT_FRACTION * n + 0.5)))


def stratified_split(catalog: DatasetCatalog, seed: int) -> SplitManifest:
    """Split per identity into 80% train / 10% val / 10% test.

    Per identity, a seeded uniform draw without replacement selects the 20%
    holdout (round-half-up, clamped to >= 2); the holdout is halved into val
    and test with the odd record going to test. Identities are processed in
    sorted order so identical (catalog, seed) inputs give identical manifests.
    """
    groups = catalog.by_identity()
    for identity, recs in groups.items():
        if len(recs) < 3:
            raise TooFewImages(identity, len(recs))

    rng = np.random.default_rng(seed)
    train: list[ImageRecord] = []
    val: list[ImageRecord] = []
    test: list[ImageRecord] = []
    for identity in sorted(groups):
        recs = groups[identity]
        n = len(recs)
        n_holdout = holdout_size(n)
        drawn = rng.choice(n, size=n_holdout, replace=False)
        n_val = n_holdout // 2
        val_idx = set(int(i) for i in drawn[:n_val])
        test_idx = set(int(i) for i in drawn[n_val:])
        for i, rec in enumerate(recs):
            if i in val_idx:
                val.append(rec)
            elif i in test_idx:
                test.append(rec)
            else:
                train.append(rec)

    return SplitManifest(
        train=tuple(train), val=tuple(val), test=tuple(test), seed=seed
    )


def save_manifest(manifest: SplitManifest, path: Path | str, root: Path | str) -> None:
    """Write a manifest as JSON with paths stored relative to ``root``."""
    root = Path(root)

    def encode(records: tuple[ImageRecord, ...]) -> list[dict]:
        return [
            {
                "identity": r.identity_id,
                "view": r.view.value,
                "path": r.path.relative_to(root).as_posix(),
            }
            for r in records
        ]

    payload = {
        "seed": manifest.seed,
        "fractions": list(manifest.fractions),
        "splits": {
            "train": encode(manifest.train),
            "val": encode(manifest.val),
            "test": encode(manifest.test),
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_manifest(path: Path | str, root: Path | str) -> SplitManifest:
    """Load a manifest written by save_manifest, resolving paths against root.

    Record indices are recomputed from the union of the three splits, which by
    construction covers the originating catalog.
    """
    root = Path(root)
    payload = json.loads(Path(path).read_text(encoding="utf-8"))

    raw: dict[str, list[tuple[str, View, Path]]] = {}
    for split_name in ("train", "val", "test"):
        raw[split_name] = [
            (item["identity"], View(item["view"]), root / item["path"])
            for item in payload["splits"][split_name]
        ]

    # Rebuild per-group indices by filename order over the whole manifest.
    all_items = [item for items in raw.values() for item in items]
    indices: dict[Path, int] = {}
    by_group: dict[tuple[str, View], list[Path]] = {}
    for identity, view, p in all_items:
        by_group.setdefault((identity, view), []).append(p)
    for paths in by_group.values():
        for i, p in enumerate(sorted(paths, key=lambda q: q.name)):
            indices[p] = i

    def decode(items: list[tuple[str, View, Path]]) -> tuple[ImageRecord, ...]:
        return tuple(
            ImageRecord(identity_id=identity, view=view, path=p, index=indices[p])
            for identity, view, p in items
        )

    return SplitManifest(
        train=decode(raw["train"]),
        val=decode(raw["val"]),
        test=decode(raw["test"]),
        seed=int(payload["seed"]),
        fractions=tuple(payload["fractions"]),
    )
