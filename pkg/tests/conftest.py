import sys

import numpy as np
import pytest
import torch
from PIL import Image

from reidkit.catalog import (
    filter_min_images,
    scan_dataset,
    select_view,
    stratified_split,
)
from reidkit.model import BackboneSpec, build_network
from reidkit.synth import generate_synthetic_dataset


def write_png(path, size=(8, 8), color=(200, 30, 30)):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", size, color).save(path)
    return path


@pytest.fixture
def tiny_root(tmp_path):
    """Handcrafted dataset: alpha has 3 front + 2 top, beta has 2 front, 1 top."""
    root = tmp_path / "cats"
    for name in ["img_b.png", "img_a.png", "img_c.png"]:
        write_png(root / "alpha" / "front" / name, color=(200, 30, 30))
    for name in ["t1.jpg", "t0.jpg"]:
        write_png(root / "alpha" / "top" / name, color=(30, 200, 30))
    for name in ["x.png", "y.jpeg"]:
        write_png(root / "beta" / "front" / name, color=(30, 30, 200))
    write_png(root / "beta" / "top" / "z.png", color=(150, 150, 30))
    (root / "alpha" / "front" / "notes.txt").write_text("not an image")
    return root


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth") / "data"
    generate_synthetic_dataset(root, n_identities=4, images_per_identity=8, seed=123)
    return root


@pytest.fixture(scope="session")
def front_manifest(synth_root):
    catalog = select_view(scan_dataset(synth_root), "front")
    catalog = filter_min_images(catalog, 1)
    return stratified_split(catalog, seed=77)


@pytest.fixture(scope="session")
def tinyconv_net():
    return build_network(BackboneSpec.default("tinyconv"), seed=42)


@pytest.fixture(scope="session")
def hub_cache(tmp_path_factory):
    """Local weight cache so pretrained loading works without network access.

    Stores a reproducibly initialized mobilenet_v3_large state dict under the
    filename torchvision expects for its IMAGENET1K_V1 checkpoint. The raw
    random init attenuates activations to ~1e-9 at the feature output, which
    flattens every pairwise distance to numerical noise; recalibrating the
    batch-norm running stats with one full-momentum pass restores unit-scale,
    input-dependent features like genuinely trained weights have.
    """
    import os

    from torchvision.models import MobileNet_V3_Large_Weights, mobilenet_v3_large

    cache = tmp_path_factory.mktemp("weights")
    ckpt_dir = cache / "hub" / "checkpoints"
    ckpt_dir.mkdir(parents=True)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(0)
        model = mobilenet_v3_large(weights=None)
        for mod in model.modules():
            if isinstance(mod, torch.nn.BatchNorm2d):
                mod.momentum = 1.0
        model.train()
        with torch.no_grad():
            model((torch.rand(16, 3, 150, 150) - 0.45) / 0.225)
        model.eval()
    filename = os.path.basename(MobileNet_V3_Large_Weights.IMAGENET1K_V1.url)
    torch.save(model.state_dict(), ckpt_dir / filename)
    return cache


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)


def make_records(spec, view="front", prefix="/fake"):
    """Fabricate ImageRecords without touching disk: {identity: n_images}."""
    from pathlib import Path

    from reidkit.catalog import ImageRecord, View

    records = []
    for identity, n in sorted(spec.items()):
        for i in range(n):
            records.append(
                ImageRecord(
                    identity_id=identity,
                    view=View(view),
                    path=Path(prefix) / identity / view / f"img{i:03d}.png",
                    index=i,
                )
            )
    return tuple(records)
