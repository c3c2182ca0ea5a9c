"""Accuracy and F1 over gallery-matching predictions, plus result tables and plots.

UNKNOWN is a valid predicted label (it counts as an error for the true class)
but never a true label: closed-set evaluation assumes every test identity has
a gallery anchor. F1 is macro-averaged over true classes; micro-F1 is also
reported for transparency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import ImageRecord
from .errors import ReidError
from .gallery import UNKNOWN, Gallery, identify
from .model import EmbeddingNetwork
from .sampling import load_image


class EmptyTestSet(ReidError):
    """Evaluation needs at least one test record."""


class MissingGalleryIdentity(ReidError):
    """A test identity has no gallery anchor."""


@dataclass
class ConfusionTable:
    """Counts of (true identity, predicted identity-or-UNKNOWN) pairs."""

    counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def add(self, true: str, predicted: str) -> None:
        key = (true, predicted)
        self.counts[key] = self.counts.get(key, 0) + 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def true_classes(self) -> list[str]:
        return sorted({true for true, _ in self.counts})


@dataclass
class MetricsReport:
    accuracy: float
    f1_per_class: dict[str, float]
    f1_macro: float
    f1_micro: float
    confusion: ConfusionTable
    n_test: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "f1_micro": self.f1_micro,
            "f1_per_class": {k: self.f1_per_class[k] for k in sorted(self.f1_per_class)},
            "n_test": self.n_test,
            "confusion": [
                {"true": t, "predicted": p, "count": c}
                for (t, p), c in sorted(self.confusion.counts.items())
            ],
        }


def compute_f1(confusion: ConfusionTable) -> tuple[dict[str, float], float]:
    """Per-class and macro F1 from a confusion table.

    Per class: precision TP/(TP+FP), recall TP/(TP+FN), F1 = 2PR/(P+R) with
    F1 = 0 when P+R = 0. Macro is the unweighted mean over true classes.
    """
    if not confusion.counts:
        raise ValueError("confusion table is empty")
    classes = confusion.true_classes()
    f1_per_class: dict[str, float] = {}
    for c in classes:
        tp = confusion.counts.get((c, c), 0)
        fp = sum(n for (t, p), n in confusion.counts.items() if p == c and t != c)
        fn = sum(n for (t, p), n in confusion.counts.items() if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        f1_per_class[c] = f1
    macro = sum(f1_per_class.values()) / len(f1_per_class)
    return f1_per_class, macro


def _micro_f1(confusion: ConfusionTable) -> float:
    # Single-label multi-class with an abstain column: every sample carries one
    # prediction, so micro precision = micro recall = pooled accuracy.
    tp = sum(n for (t, p), n in confusion.counts.items() if t == p)
    return tp / confusion.total if confusion.total else 0.0


def evaluate(
    network: EmbeddingNetwork,
    gallery: Gallery,
    test_records: list[ImageRecord] | tuple[ImageRecord, ...],
    threshold: float,
) -> MetricsReport:
    """Run gallery identification over the test records and aggregate metrics."""
    if not test_records:
        raise EmptyTestSet("no test records to evaluate")
    missing = {r.identity_id for r in test_records} - set(gallery.entries)
    if missing:
        raise MissingGalleryIdentity(
            f"test identities missing from gallery: {sorted(missing)}"
        )

    confusion = ConfusionTable()
    for record in test_records:
        result = identify(network, gallery, load_image(record), threshold)
        confusion.add(record.identity_id, result.verdict)

    correct = sum(n for (t, p), n in confusion.counts.items() if t == p)
    f1_per_class, f1_macro = compute_f1(confusion)
    return MetricsReport(
        accuracy=correct / confusion.total,
        f1_per_class=f1_per_class,
        f1_macro=f1_macro,
        f1_micro=_micro_f1(confusion),
        confusion=confusion,
        n_test=confusion.total,
    )


def report_from_dict(payload: dict) -> MetricsReport:
    """Rebuild a MetricsReport from its to_dict() form."""
    confusion = ConfusionTable()
    for item in payload["confusion"]:
        confusion.counts[(item["true"], item["predicted"])] = item["count"]
    return MetricsReport(
        accuracy=payload["accuracy"],
        f1_per_class=dict(payload["f1_per_class"]),
        f1_macro=payload["f1_macro"],
        f1_micro=payload["f1_micro"],
        confusion=confusion,
        n_test=payload["n_test"],
    )


RESULT_COLUMNS = [
    "photo_type",
    "backbone",
    "loss",
    "learning_rate",
    "augmentation",
    "epochs",
    "seed",
    "accuracy",
    "f1_macro",
    "status",
    "checkpoint_path",
]


def write_report(results: list, out_dir: Path | str) -> list[Path]:
    """Emit results.csv, top5.csv (best f1_macro first) and loss-curve plots.

    ``results`` are ExperimentResult values from the trainer. Returns the
    paths written.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not results:
        raise ValueError("no results to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def rows_of(subset):
        return [r.result_row() for r in subset]

    results_csv = out_dir / "results.csv"
    with results_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows_of(results))
    written.append(results_csv)

    scored = [r for r in results if r.metrics is not None]
    top = sorted(scored, key=lambda r: r.metrics.f1_macro, reverse=True)[:5]
    top5_csv = out_dir / "top5.csv"
    with top5_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows_of(top))
    written.append(top5_csv)

    for r in results:
        if r.history is None or not r.history.train_loss:
            continue
        epochs = range(1, len(r.history.train_loss) + 1)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, r.history.train_loss, label="train")
        ax.plot(epochs, r.history.val_loss, label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(r.config.config_hash())
        ax.legend()
        fig.tight_layout()
        plot_path = out_dir / f"{r.config.config_hash()}_loss.png"
        fig.savefig(plot_path)
        plt.close(fig)
        written.append(plot_path)
    return written
