"""End-to-end training of one experiment configuration and sequential sweeps.

A training run builds the seeded network, samples pairs or triplets from the
train split, applies offline augmentation, optimizes the trainable parameters
with Adam, and evaluates by gallery matching on the test split. Frozen
backbones are exploited by caching their features once and training the head
on them, which is mathematically identical to the full forward pass.

Sweeps execute strictly sequentially, append one row to results.csv per
attempted configuration, and are crash-resumable: a completed configuration
leaves a result.json marker in its experiment directory and is skipped on
re-runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .catalog import PhotoType, SplitManifest
from .errors import ReidError
from .gallery import Gallery, build_gallery, save_gallery, select_anchors
from .losses import (
    LossConfig,
    contrastive_from_distances,
    embedding_distances,
    triplet_from_distances,
)
from .metrics import MetricsReport, evaluate, report_from_dict
from .model import (
    BackboneSpec,
    EmbeddingNetwork,
    backbone_checksum,
    build_network,
    save_checkpoint,
)
from .sampling import (
    AugmentationKind,
    expand_with_augmentation,
    load_pairs,
    load_triplets,
    make_pairs,
    make_triplets,
)
from .seeding import (
    ROLE_AUGMENT,
    ROLE_EPOCH,
    ROLE_NETWORK,
    ROLE_SAMPLING,
    ROLE_VAL_SAMPLING,
    derive_seed,
)

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-7

RESULTS_CSV = "results.csv"
SWEEP_LOG = "sweep.log"
EXPERIMENTS_DIR = "experiments"


class NonFiniteLoss(ReidError):
    """Training produced a non-finite loss; the run is aborted."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class EmptyGrid(ReidError):
    """A sweep needs at least one configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of the hyperparameter grid."""

    photo_type: PhotoType
    backbone: str
    loss: LossConfig
    learning_rate: float = 0.0001
    epochs: int = 100
    augmentation: AugmentationKind = AugmentationKind.NONE
    batch_size: int = 32
    seed: int = 0
    threshold: float = 0.4
    pairs_per_record: int = 2
    # None defers to the backbone's default (pretrained+frozen for the
    # torchvision models, scratch for tinyconv).
    pretrained: bool | None = None
    frozen: bool | None = None
    anchor_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "photo_type", PhotoType(self.photo_type))
        object.__setattr__(self, "augmentation", AugmentationKind(self.augmentation))
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pairs_per_record < 1:
            raise ValueError("pairs_per_record must be >= 1")

    def backbone_spec(self) -> BackboneSpec:
        default = BackboneSpec.default(self.backbone)
        pretrained = default.pretrained if self.pretrained is None else self.pretrained
        frozen = default.frozen if self.frozen is None else self.frozen
        return BackboneSpec(name=self.backbone, pretrained=pretrained, frozen=frozen)

    def to_dict(self) -> dict:
        spec = self.backbone_spec()
        return {
            "photo_type": self.photo_type.value,
            "backbone": self.backbone,
            "loss": self.loss.kind,
            "margin": self.loss.margin,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "augmentation": self.augmentation.value,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "threshold": self.threshold,
            "pairs_per_record": self.pairs_per_record,
            "pretrained": spec.pretrained,
            "frozen": spec.frozen,
            "anchor_seed": self.anchor_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        loss = LossConfig(kind=d.pop("loss"), margin=d.pop("margin", None))
        return cls(loss=loss, **d)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]


@dataclass
class TrainingHistory:
    """Per-epoch train loss, validation loss, and wall-clock seconds."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, train: float, val: float, secs: float) -> None:
        self.train_loss.append(train)
        self.val_loss.append(val)
        self.seconds.append(secs)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path: Path | str) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for i, (tr, va, se) in enumerate(
                zip(self.train_loss, self.val_loss, self.seconds), start=1
            ):
                writer.writerow([i, f"{tr:.8f}", f"{va:.8f}", f"{se:.4f}"])

    @classmethod
    def from_csv(cls, path: Path | str) -> "TrainingHistory":
        history = cls()
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                history.append(
                    float(row["train_loss"]), float(row["val_loss"]), float(row["seconds"])
                )
        return history


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    history: TrainingHistory | None
    metrics: MetricsReport | None
    checkpoint_path: Path | None
    status: str = "ok"

    def result_row(self) -> dict:
        return {
            "photo_type": self.config.photo_type.value,
            "backbone": self.config.backbone,
            "loss": self.config.loss.kind,
            "learning_rate": self.config.learning_rate,
            "augmentation": self.config.augmentation.value,
            "epochs": self.config.epochs,
            "seed": self.config.seed,
            "accuracy": f"{self.metrics.accuracy:.6f}" if self.metrics else "",
            "f1_macro": f"{self.metrics.f1_macro:.6f}" if self.metrics else "",
            "status": self.status,
            "checkpoint_path": str(self.checkpoint_path) if self.checkpoint_path else "",
        }


class _SampleBank:
    """Stacked sample slots ready for batched loss evaluation.

    For frozen backbones the slots hold precomputed backbone features and a
    batch runs through the head only; otherwise they hold raw image tensors
    and a batch runs the full network.
    """

    def __init__(self, slots: list[torch.Tensor], labels: torch.Tensor | None):
        self.slots = slots
        self.labels = labels

    def __len__(self) -> int:
        return self.slots[0].shape[0]

    @classmethod
    def from_samples(
        cls, samples: list[tuple], network: EmbeddingNetwork, feature_batch: int = 64
    ) -> "_SampleBank":
        n_slots = sum(1 for x in samples[0] if isinstance(x, np.ndarray))
        labels = None
        if len(samples[0]) > n_slots:
            labels = torch.tensor([s[-1] for s in samples], dtype=torch.float32)

        slot_tensors: list[torch.Tensor] = []
        for j in range(n_slots):
            arrays = [s[j] for s in samples]
            images = torch.from_numpy(np.stack(arrays).astype(np.float32)).permute(
                0, 3, 1, 2
            )
            if network.backbone_frozen:
                feats = []
                with torch.no_grad():
                    for start in range(0, len(images), feature_batch):
                        feats.append(network.features(images[start : start + feature_batch]))
                slot_tensors.append(torch.cat(feats))
            else:
                slot_tensors.append(images)
        return cls(slot_tensors, labels)

    def embeddings(self, network: EmbeddingNetwork, idx: torch.Tensor) -> list[torch.Tensor]:
        out = []
        for slot in self.slots:
            batch = slot[idx]
            if network.backbone_frozen:
                out.append(network.head(batch))
            else:
                out.append(network(batch))
        return out


def _batch_loss(
    network: EmbeddingNetwork,
    bank: _SampleBank,
    idx: torch.Tensor,
    loss_config: LossConfig,
) -> torch.Tensor:
    emb = bank.embeddings(network, idx)
    if loss_config.kind == "contrastive":
        distances = embedding_distances(emb[0], emb[1])
        return contrastive_from_distances(distances, bank.labels[idx], loss_config.margin)
    d_ap = embedding_distances(emb[0], emb[1])
    d_an = embedding_distances(emb[0], emb[2])
    return triplet_from_distances(d_ap, d_an, loss_config.margin)


def _dataset_loss(
    network: EmbeddingNetwork, bank: _SampleBank, loss_config: LossConfig, batch_size: int
) -> float:
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(bank), batch_size):
            idx = torch.arange(start, min(start + batch_size, len(bank)))
            total += _batch_loss(network, bank, idx, loss_config).item() * len(idx)
    return total / len(bank)


def _build_samples(config: ExperimentConfig, manifest: SplitManifest):
    sample_seed = derive_seed(config.seed, ROLE_SAMPLING)
    val_seed = derive_seed(config.seed, ROLE_VAL_SAMPLING)
    if config.loss.kind == "contrastive":
        train = load_pairs(make_pairs(manifest.train, config.pairs_per_record, sample_seed))
        val = load_pairs(make_pairs(manifest.val, config.pairs_per_record, val_seed))
    else:
        train = load_triplets(
            make_triplets(manifest.train, config.pairs_per_record, sample_seed)
        )
        val = load_triplets(make_triplets(manifest.val, config.pairs_per_record, val_seed))
    train = expand_with_augmentation(
        train, config.augmentation, derive_seed(config.seed, ROLE_AUGMENT)
    )
    return train, val


def _check_manifest(config: ExperimentConfig, manifest: SplitManifest) -> None:
    for split_name in ("train", "val", "test"):
        records = getattr(manifest, split_name)
        if not records:
            raise ValueError(f"manifest {split_name} split is empty")
        for r in records:
            if not config.photo_type.admits(r.view):
                raise ValueError(
                    f"manifest record {r.path} has view {r.view.value!r}, "
                    f"inconsistent with photo_type {config.photo_type.value!r}"
                )


def experiment_dir(out_dir: Path | str, config: ExperimentConfig) -> Path:
    return Path(out_dir) / EXPERIMENTS_DIR / config.config_hash()


def train(
    config: ExperimentConfig,
    manifest: SplitManifest,
    out_dir: Path | str,
    cache_dir: Path | str | None = None,
    deterministic: bool = True,
) -> ExperimentResult:
    """Train one configuration and evaluate it by gallery matching.

    Writes config.json, history.csv, gallery.json, checkpoint/ and a
    result.json completion marker into the experiment directory
    ``out_dir/experiments/<config_hash>``.
    """
    _check_manifest(config, manifest)
    exp_dir = experiment_dir(out_dir, config)
    exp_dir.mkdir(parents=True, exist_ok=True)
    (exp_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2), encoding="utf-8"
    )

    was_deterministic = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(deterministic, warn_only=True)
    try:
        network = build_network(
            config.backbone_spec(), derive_seed(config.seed, ROLE_NETWORK), cache_dir
        )
        frozen_sum = backbone_checksum(network) if network.backbone_frozen else None

        train_samples, val_samples = _build_samples(config, manifest)
        train_bank = _SampleBank.from_samples(train_samples, network)
        val_bank = (
            _SampleBank.from_samples(val_samples, network) if val_samples else None
        )
        if val_bank is None:
            log.warning(
                "validation split yields no %s samples; recording train loss as "
                "val loss", config.loss.kind,
            )
        del train_samples, val_samples

        optimizer = torch.optim.Adam(
            network.trainable_parameters(),
            lr=config.learning_rate,
            betas=ADAM_BETAS,
            eps=ADAM_EPS,
        )
        history = TrainingHistory()
        n = len(train_bank)
        network.train()
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            perm = torch.from_numpy(
                np.random.default_rng(
                    derive_seed(config.seed, ROLE_EPOCH, epoch)
                ).permutation(n)
            )
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = perm[start : start + config.batch_size]
                optimizer.zero_grad()
                loss = _batch_loss(network, train_bank, idx, config.loss)
                if not torch.isfinite(loss):
                    raise NonFiniteLoss(epoch)
                loss.backward()
                optimizer.step()
                total += loss.item() * len(idx)
            train_loss = total / n
            network.eval()
            val_loss = (
                _dataset_loss(network, val_bank, config.loss, config.batch_size)
                if val_bank is not None
                else train_loss
            )
            network.train()
            history.append(train_loss, val_loss, time.perf_counter() - t0)
        network.eval()

        if frozen_sum is not None and backbone_checksum(network) != frozen_sum:
            raise RuntimeError("frozen backbone parameters changed during training")

        checkpoint_path = save_checkpoint(
            network, exp_dir / "checkpoint", config.config_hash()
        )
        history.to_csv(exp_dir / "history.csv")

        anchors = select_anchors(manifest.train, seed=config.anchor_seed)
        gallery = build_gallery(network, anchors)
        save_gallery(gallery, exp_dir / "gallery.json")
        metrics = evaluate(network, gallery, manifest.test, config.threshold)

        result = ExperimentResult(
            config=config,
            history=history,
            metrics=metrics,
            checkpoint_path=checkpoint_path,
            status="ok",
        )
        (exp_dir / "result.json").write_text(
            json.dumps(
                {
                    "config_hash": config.config_hash(),
                    "status": result.status,
                    "metrics": metrics.to_dict(),
                    "checkpoint_path": str(checkpoint_path),
                },
                indent=2,
            ),
            encoding="utf-8",
        )
        return result
    finally:
        torch.use_deterministic_algorithms(was_deterministic, warn_only=True)


def is_completed(out_dir: Path | str, config: ExperimentConfig) -> bool:
    return (experiment_dir(out_dir, config) / "result.json").exists()


def load_result(out_dir: Path | str, config: ExperimentConfig) -> ExperimentResult:
    """Rebuild an ExperimentResult from a completed experiment directory."""
    exp_dir = experiment_dir(out_dir, config)
    payload = json.loads((exp_dir / "result.json").read_text(encoding="utf-8"))
    return ExperimentResult(
        config=config,
        history=TrainingHistory.from_csv(exp_dir / "history.csv"),
        metrics=report_from_dict(payload["metrics"]),
        checkpoint_path=Path(payload["checkpoint_path"]),
        status=payload["status"],
    )


def append_result_row(path: Path | str, row: dict) -> None:
    from .metrics import RESULT_COLUMNS

    path = Path(path)
    write_header = not path.exists()
    with path.open("a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if write_header:
            writer.writeheader()
        writer.writerow(row)


def _log_line(path: Path, message: str) -> None:
    stamp = datetime.now(timezone.utc).isoformat()
    with path.open("a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {message}\n")


def _recorded_hashes(path: Path) -> set[str]:
    """Config hashes already present in results.csv, read off checkpoint paths."""
    if not path.exists():
        return set()
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parts = Path(row.get("checkpoint_path") or "").parts
            if EXPERIMENTS_DIR in parts:
                seen.add(parts[parts.index(EXPERIMENTS_DIR) + 1])
    return seen


def run_sweep(
    grid: list[ExperimentConfig],
    manifest_provider: Callable[[ExperimentConfig], SplitManifest],
    out_dir: Path | str,
    cache_dir: Path | str | None = None,
    deterministic: bool = True,
) -> list[ExperimentResult]:
    """Execute configurations strictly sequentially with resumable bookkeeping.

    One row is appended to results.csv per attempted configuration; failures
    are recorded and do not abort the remaining grid. Configurations whose
    experiment directory already holds a result.json are skipped and their
    stored results returned.
    """
    if not grid:
        raise EmptyGrid("sweep grid is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_csv = out_dir / RESULTS_CSV
    sweep_log = out_dir / SWEEP_LOG

    recorded = _recorded_hashes(results_csv)
    results: list[ExperimentResult] = []
    for config in grid:
        h = config.config_hash()
        if is_completed(out_dir, config):
            _log_line(sweep_log, f"skip {h} (already completed)")
            result = load_result(out_dir, config)
            # An interruption can land between the result.json marker and the
            # csv append; backfill the row in that case.
            if h not in recorded:
                append_result_row(results_csv, result.result_row())
                recorded.add(h)
            results.append(result)
            continue
        _log_line(sweep_log, f"start {h}")
        try:
            result = train(
                config, manifest_provider(config), out_dir, cache_dir, deterministic
            )
        except (ReidError, RuntimeError, ValueError, OSError) as exc:
            log.error("config %s failed: %s", h, exc)
            result = ExperimentResult(
                config=config,
                history=None,
                metrics=None,
                checkpoint_path=None,
                status=f"failed:{type(exc).__name__}",
            )
        append_result_row(results_csv, result.result_row())
        recorded.add(h)
        _log_line(sweep_log, f"end {h} status={result.status}")
        results.append(result)
    return results


SWEEP_KEYS = (
    "photo_type",
    "backbone",
    "loss",
    "margin",
    "learning_rate",
    "epochs",
    "augmentation",
    "batch_size",
    "seed",
    "threshold",
    "pairs_per_record",
    "pretrained",
    "frozen",
    "anchor_seed",
)


def expand_sweep(sweep: dict) -> list[ExperimentConfig]:
    """Cross-product a {hyperparameter: value-list} mapping into a grid.

    Scalar values are treated as singleton lists. Keys follow SWEEP_KEYS
    order so the execution sequence is stable.
    """
    import itertools

    unknown = set(sweep) - set(SWEEP_KEYS)
    if unknown:
        raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
    keys = [k for k in SWEEP_KEYS if k in sweep]
    value_lists = []
    for k in keys:
        values = sweep[k] if isinstance(sweep[k], list) else [sweep[k]]
        if not values:
            raise ValueError(f"empty value list for sweep key {k!r}")
        value_lists.append(values)
    grid = []
    for combo in itertools.product(*value_lists):
        grid.append(ExperimentConfig.from_dict(dict(zip(keys, combo))))
    return grid


def load_sweep_file(path: Path | str) -> list[ExperimentConfig]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed sweep file {path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"sweep file {path} must hold a JSON object of value lists")
    return expand_sweep(payload)
