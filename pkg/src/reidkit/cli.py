"""Command-line surface for the re-identification pipeline.

Commands: split, train, sweep, evaluate, identify, synth. Options may come
from a JSON config file (flat keys matching the flag names) with explicit
flags taking precedence; every command echoes its fully resolved
configuration before executing.

Exit codes: 0 success, 2 usage or input errors, 3 runtime training failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import catalog as cat
from .errors import ReidError
from .gallery import (
    build_gallery,
    load_gallery,
    save_gallery,
    select_anchors,
)
from .metrics import evaluate
from .model import load_checkpoint
from .sampling import load_image_file
from .synth import generate_synthetic_dataset
from .training import (
    ExperimentConfig,
    NonFiniteLoss,
    load_sweep_file,
    run_sweep,
    train,
)


def _echo(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, **resolved}, default=str))


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge config-file values and flag overrides into an ExperimentConfig."""
    merged: dict = {}
    if args.config:
        merged.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    overrides = {
        "photo_type": args.photo_type,
        "backbone": args.backbone,
        "loss": args.loss,
        "margin": args.margin,
        "learning_rate": args.learning_rate,
        "epochs": args.epochs,
        "augmentation": args.augmentation,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "threshold": args.threshold,
        "pairs_per_record": args.pairs_per_record,
    }
    merged.update({k: v for k, v in overrides.items() if v is not None})
    merged.setdefault("photo_type", "all")
    merged.setdefault("backbone", "tinyconv")
    merged.setdefault("loss", "contrastive")
    merged.setdefault("seed", 0)
    return ExperimentConfig.from_dict(merged)


def cmd_split(args: argparse.Namespace) -> int:
    _echo("split", {
        "root": args.root, "photo_type": args.photo_type,
        "min_count": args.min_count, "seed": args.seed, "out": args.out,
    })
    catalog = cat.scan_dataset(args.root)
    catalog = cat.select_view(catalog, cat.PhotoType(args.photo_type))
    catalog = cat.filter_min_images(catalog, args.min_count)
    manifest = cat.stratified_split(catalog, args.seed)
    cat.save_manifest(manifest, args.out, args.root)
    print(
        f"wrote {args.out}: {len(manifest.train)} train / {len(manifest.val)} val / "
        f"{len(manifest.test)} test records, "
        f"{len(manifest.identities())} identities"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    _echo("train", {
        **config.to_dict(),
        "manifest": args.manifest, "root": args.root, "out": args.out,
        "cache_dir": args.cache_dir, "deterministic": args.deterministic,
    })
    manifest = cat.load_manifest(args.manifest, args.root)
    result = train(
        config, manifest, args.out,
        cache_dir=args.cache_dir, deterministic=args.deterministic,
    )
    print(json.dumps({
        "config_hash": config.config_hash(),
        "checkpoint": str(result.checkpoint_path),
        "metrics": result.metrics.to_dict(),
    }))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    grid = load_sweep_file(args.sweep_file)
    _echo("sweep", {
        "sweep_file": args.sweep_file, "configs": len(grid),
        "manifest": args.manifest, "root": args.root, "out": args.out,
        "min_count": args.min_count, "split_seed": args.split_seed,
    })

    if args.manifest:
        if not args.root:
            raise ValueError("--manifest requires --root to resolve image paths")
        fixed = cat.load_manifest(args.manifest, args.root)
        manifest_provider = lambda config: fixed  # noqa: E731
    elif args.root:
        scanned = cat.scan_dataset(args.root)
        cache: dict[cat.PhotoType, cat.SplitManifest] = {}

        def manifest_provider(config: ExperimentConfig) -> cat.SplitManifest:
            if config.photo_type not in cache:
                selected = cat.select_view(scanned, config.photo_type)
                selected = cat.filter_min_images(selected, args.min_count)
                cache[config.photo_type] = cat.stratified_split(selected, args.split_seed)
            return cache[config.photo_type]
    else:
        raise ValueError("sweep needs --manifest or --root")

    results = run_sweep(
        grid, manifest_provider, args.out,
        cache_dir=args.cache_dir, deterministic=args.deterministic,
    )
    ok = sum(1 for r in results if r.status == "ok")
    print(f"sweep finished: {ok}/{len(results)} configurations ok; "
          f"results in {Path(args.out) / 'results.csv'}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    _echo("evaluate", {
        "checkpoint": args.checkpoint, "manifest": args.manifest,
        "root": args.root, "gallery": args.gallery, "threshold": args.threshold,
    })
    network = load_checkpoint(args.checkpoint)
    manifest = cat.load_manifest(args.manifest, args.root)
    if args.gallery:
        gallery = load_gallery(args.gallery)
    else:
        gallery = build_gallery(network, select_anchors(manifest.train))
    report = evaluate(network, gallery, manifest.test, args.threshold)
    if args.save_gallery:
        save_gallery(gallery, args.save_gallery)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_identify(args: argparse.Namespace) -> int:
    _echo("identify", {
        "checkpoint": args.checkpoint, "gallery": args.gallery,
        "image": args.image, "threshold": args.threshold,
    })
    network = load_checkpoint(args.checkpoint)
    gallery = load_gallery(args.gallery)
    from .gallery import identify as run_identify

    result = run_identify(network, gallery, load_image_file(args.image), args.threshold)
    print(json.dumps(result.to_dict()))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    _echo("synth", {
        "out": args.out, "n_identities": args.n_identities,
        "images_per_identity": args.images_per_identity, "seed": args.seed,
    })
    root = generate_synthetic_dataset(
        args.out, args.n_identities, args.images_per_identity, args.seed
    )
    print(f"wrote synthetic dataset to {root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reidkit",
        description="Siamese-embedding re-identification: dataset splitting, "
        "training, sweeps, and open-set gallery matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base random seed")
    common.add_argument("--cache-dir", default=None, help="pretrained weight cache directory")
    common.add_argument(
        "--deterministic", action=argparse.BooleanOptionalAction, default=True,
        help="request deterministic kernels (default on)",
    )

    p = sub.add_parser("split", parents=[common], help="scan, filter, and split a dataset")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--photo-type", choices=["front", "top", "all"], default="all")
    p.add_argument("--min-count", type=int, default=1,
                   help="keep identities with at least this many images")
    p.add_argument("--out", required=True, help="manifest JSON output path")
    p.set_defaults(func=cmd_split, seed=None)

    p = sub.add_parser("train", parents=[common], help="train one configuration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--photo-type", choices=["front", "top", "all"], default=None)
    p.add_argument("--backbone", default=None,
                   choices=["vgg16", "mobilenet_v3_large", "efficientnet_b0", "tinyconv"])
    p.add_argument("--loss", choices=["contrastive", "triplet"], default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--learning-rate", "--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--augmentation", choices=["none", "flip", "rotate", "noise"], default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--pairs-per-record", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="run a hyperparameter grid")
    p.add_argument("--sweep-file", required=True, help="JSON of per-hyperparameter value lists")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="use one prebuilt manifest for every configuration")
    p.add_argument("--root", help="dataset root; manifests built per photo type")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on a test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--gallery", help="gallery JSON; defaults to anchors from the train split")
    p.add_argument("--save-gallery", help="write the gallery used to this path")
    p.add_argument("--threshold", type=float, default=0.4)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("identify", parents=[common], help="identify a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float, default=0.4)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-identities", type=int, default=8)
    p.add_argument("--images-per-identity", type=int, default=40)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = 0 if args.command in ("split", "synth") else None
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return 3
    except (ReidError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
