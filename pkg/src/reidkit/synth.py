"""Desk-scale synthetic dataset generator.

Each identity gets a unique two-tone color scheme and texture; the two views
use different pattern families (rings for front, stripes for top). Per-image
jitter moves the pattern, scales brightness, and adds light pixel noise, so
images of one identity vary while staying visually coherent. Output follows
the standard <out>/<identity>/{front,top}/*.png layout and is byte-identical
for a fixed seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from .sampling import IMAGE_SIZE
from .seeding import ROLE_SYNTH, derive_seed

_GOLDEN = 0.6180339887498949

_VIEWS = ("front", "top")


def _identity_style(identity_index: int, seed: int) -> dict:
    rng = np.random.default_rng(derive_seed(seed, ROLE_SYNTH, identity_index))
    hue = (identity_index * _GOLDEN) % 1.0
    return {
        "hue_a": hue,
        "hue_b": (hue + 0.08 + 0.10 * rng.uniform()) % 1.0,
        "saturation": 0.65 + 0.25 * rng.uniform(),
        "frequency": 2.0 + 4.0 * rng.uniform(),
        "angle": rng.uniform(0, np.pi),
    }


def _render(style: dict, view: str, image_rng: np.random.Generator) -> np.ndarray:
    phase = image_rng.uniform(0, 2 * np.pi)
    brightness = 0.85 + 0.3 * image_rng.uniform()
    hue_jitter = image_rng.uniform(-0.02, 0.02)

    y, x = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    cx = IMAGE_SIZE / 2 + image_rng.uniform(-15, 15)
    cy = IMAGE_SIZE / 2 + image_rng.uniform(-15, 15)
    if view == "front":
        radius = np.hypot(x - cx, y - cy)
        wave = np.sin(2 * np.pi * style["frequency"] * radius / IMAGE_SIZE + phase)
    else:
        axis = (x - cx) * np.cos(style["angle"]) + (y - cy) * np.sin(style["angle"])
        wave = np.sin(2 * np.pi * style["frequency"] * axis / IMAGE_SIZE + phase)

    two_tone = wave > 0
    hsv = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3))
    hsv[..., 0] = np.where(two_tone, style["hue_a"], style["hue_b"]) + hue_jitter
    hsv[..., 0] %= 1.0
    hsv[..., 1] = style["saturation"]
    hsv[..., 2] = np.clip(brightness * (0.7 + 0.3 * np.abs(wave)), 0, 1)
    rgb = hsv_to_rgb(hsv)
    rgb += image_rng.normal(0, 0.02, rgb.shape)
    return (np.clip(rgb, 0, 1) * 255).astype(np.uint8)


def generate_synthetic_dataset(
    out_dir: Path | str, n_identities: int, images_per_identity: int, seed: int
) -> Path:
    """Write a synthetic identity tree; refuses to touch a non-empty directory."""
    if n_identities < 1 or images_per_identity < 1:
        raise ValueError("n_identities and images_per_identity must be >= 1")
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise FileExistsError(f"output directory {out_dir} is not empty")
    out_dir.mkdir(parents=True, exist_ok=True)

    width = max(2, len(str(n_identities - 1)))
    for i in range(n_identities):
        style = _identity_style(i, seed)
        identity = f"id{i:0{width}d}"
        for v, view in enumerate(_VIEWS):
            view_dir = out_dir / identity / view
            view_dir.mkdir(parents=True)
            for k in range(images_per_identity):
                rng = np.random.default_rng(derive_seed(seed, ROLE_SYNTH, i, v, k))
                pixels = _render(style, view, rng)
                Image.fromarray(pixels).save(view_dir / f"img{k:03d}.png")
    return out_dir
