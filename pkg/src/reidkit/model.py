"""Twin embedding network: pluggable backbone, 256-unit ReLU layer, 128-d output.

One parameter store serves both branches of every training pair or triplet
(the twin property): callers run the same module on each input. Backbones are
consumed as feature extractors with their classification layers removed; when
frozen they also stay in eval mode so normalization statistics never drift.

Input preprocessing is owned by the network: the torchvision architectures
normalize with ImageNet channel statistics, tinyconv centers [0,1] pixels to
[-1,1]. Checkpoints carry these buffers, so a restored network is
self-contained.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ReidError
from .sampling import IMAGE_SIZE

EMBEDDING_DIM = 128
HIDDEN_UNITS = 256

BACKBONE_NAMES = ("vgg16", "mobilenet_v3_large", "efficientnet_b0", "tinyconv")

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class WeightsUnavailable(ReidError):
    """Pretrained backbone weights could not be loaded."""


class ShapeMismatch(ReidError):
    """Input image tensor is not 150x150x3."""


class DimensionMismatch(ReidError):
    """Embedding vectors have incompatible shapes."""


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    pretrained: bool
    frozen: bool

    def __post_init__(self):
        if self.name not in BACKBONE_NAMES:
            raise ValueError(f"unknown backbone {self.name!r}; expected one of {BACKBONE_NAMES}")
        if self.name == "tinyconv" and self.pretrained:
            raise ValueError("tinyconv has no pretrained weights")
        if self.pretrained and not self.frozen:
            raise ValueError("pretrained backbones are used frozen")

    @classmethod
    def default(cls, name: str) -> "BackboneSpec":
        """Pretrained+frozen for the torchvision backbones, scratch for tinyconv."""
        if name == "tinyconv":
            return cls(name=name, pretrained=False, frozen=False)
        return cls(name=name, pretrained=True, frozen=True)


def _tinyconv_features() -> nn.Sequential:
    """Four conv-pool blocks, small enough to train from scratch on CPU."""
    layers: list[nn.Module] = []
    c_in = 3
    for c_out in (8, 16, 32, 64):
        layers += [
            nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        ]
        c_in = c_out
    return nn.Sequential(*layers)


class EmbeddingNetwork(nn.Module):
    """Backbone feature extractor followed by flatten -> 256 ReLU -> 128 linear."""

    def __init__(self, spec: BackboneSpec, backbone: nn.Module, seed: int):
        super().__init__()
        self.spec = spec
        self.seed = seed
        self.backbone = backbone

        mean, std = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
        if spec.name != "tinyconv":
            mean, std = _IMAGENET_MEAN, _IMAGENET_STD
        self.register_buffer("input_mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(std).view(1, 3, 1, 1))

        with torch.no_grad():
            probe = torch.zeros(1, 3, IMAGE_SIZE, IMAGE_SIZE)
            flat_dim = self.backbone(probe).flatten(1).shape[1]
        self.head = nn.Sequential(
            nn.Linear(flat_dim, HIDDEN_UNITS),
            nn.ReLU(inplace=True),
            nn.Linear(HIDDEN_UNITS, EMBEDDING_DIM),
        )

        if spec.frozen:
            for p in self.backbone.parameters():
                p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True) -> "EmbeddingNetwork":
        super().train(mode)
        # A frozen backbone never leaves eval, keeping batch-norm statistics
        # and stochastic-depth behavior fixed.
        if self.spec.frozen:
            self.backbone.eval()
        return self

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Normalized backbone features, flattened to (batch, flat_dim)."""
        z = self.backbone((x - self.input_mean) / self.input_std)
        return z.flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))

    @property
    def backbone_frozen(self) -> bool:
        return self.spec.frozen

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]


def _torchvision_backbone(name: str, pretrained: bool, cache_dir: Path | str | None) -> nn.Module:
    import torchvision.models as models

    weights_for = {
        "vgg16": models.VGG16_Weights.IMAGENET1K_V1,
        "mobilenet_v3_large": models.MobileNet_V3_Large_Weights.IMAGENET1K_V1,
        "efficientnet_b0": models.EfficientNet_B0_Weights.IMAGENET1K_V1,
    }
    builder_for = {
        "vgg16": models.vgg16,
        "mobilenet_v3_large": models.mobilenet_v3_large,
        "efficientnet_b0": models.efficientnet_b0,
    }
    weights = weights_for[name] if pretrained else None
    if pretrained and cache_dir is not None:
        torch.hub.set_dir(str(Path(cache_dir) / "hub"))
    try:
        full = builder_for[name](weights=weights)
    except (OSError, RuntimeError, ValueError) as exc:
        raise WeightsUnavailable(
            f"pretrained weights for {name!r} could not be loaded "
            f"(cache_dir={cache_dir}): {exc}"
        ) from exc
    # .features is the convolutional stack; classifier layers are dropped.
    return full.features


def build_network(
    spec: BackboneSpec, seed: int, cache_dir: Path | str | None = None
) -> EmbeddingNetwork:
    """Construct a seeded network for ``spec``.

    Head weights (and scratch backbone weights) are drawn from a forked RNG
    seeded with ``seed``, so the same (spec, seed) always yields identical
    initial parameters. Pretrained weights resolve through the torch hub
    cache under ``cache_dir`` and raise WeightsUnavailable on failure.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if spec.name == "tinyconv":
            backbone = _tinyconv_features()
        else:
            backbone = _torchvision_backbone(spec.name, spec.pretrained, cache_dir)
        return EmbeddingNetwork(spec=spec, backbone=backbone, seed=seed)


def _to_batch_tensor(images: np.ndarray | list[np.ndarray]) -> torch.Tensor:
    arrays = list(images) if isinstance(images, (list, tuple)) else [images[i] for i in range(len(images))]
    for a in arrays:
        if a.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ShapeMismatch(
                f"expected {(IMAGE_SIZE, IMAGE_SIZE, 3)} input, got {a.shape}"
            )
    stacked = np.stack(arrays).astype(np.float32)
    return torch.from_numpy(stacked).permute(0, 3, 1, 2).contiguous()


def embed(network: EmbeddingNetwork, image: np.ndarray) -> np.ndarray:
    """Embed one 150x150x3 [0,1] image into a 128-d vector."""
    return embed_batch(network, [image])[0]


def embed_batch(network: EmbeddingNetwork, images: np.ndarray | list[np.ndarray]) -> np.ndarray:
    """Embed a batch of images; row i equals embed() of image i alone."""
    x = _to_batch_tensor(images)
    was_training = network.training
    network.eval()
    try:
        with torch.no_grad():
            out = network(x)
    finally:
        network.train(was_training)
    return out.numpy().astype(np.float32)


def pairwise_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two embedding vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatch(f"incompatible embedding shapes {a.shape} and {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def backbone_checksum(network: EmbeddingNetwork) -> str:
    """SHA-256 over all backbone parameters and buffers, in state-dict order."""
    digest = hashlib.sha256()
    state = network.backbone.state_dict()
    for key in sorted(state):
        digest.update(key.encode())
        digest.update(state[key].numpy(force=True).tobytes())
    return digest.hexdigest()


def head_checksum(network: EmbeddingNetwork) -> str:
    digest = hashlib.sha256()
    state = network.head.state_dict()
    for key in sorted(state):
        digest.update(key.encode())
        digest.update(state[key].numpy(force=True).tobytes())
    return digest.hexdigest()


def save_checkpoint(
    network: EmbeddingNetwork, directory: Path | str, config_hash: str | None = None
) -> Path:
    """Write weights and metadata into ``directory``; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(network.state_dict(), directory / "weights.pt")
    meta = {
        "backbone": network.spec.name,
        "pretrained": network.spec.pretrained,
        "frozen": network.spec.frozen,
        "seed": network.seed,
        "embedding_dim": EMBEDDING_DIM,
        "config_hash": config_hash,
    }
    (directory / "metadata.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return directory


def load_checkpoint(directory: Path | str) -> EmbeddingNetwork:
    """Rebuild a network from a checkpoint directory.

    The saved state dict carries every weight including the backbone, so no
    pretrained download is needed at load time.
    """
    directory = Path(directory)
    meta = json.loads((directory / "metadata.json").read_text(encoding="utf-8"))
    spec = BackboneSpec(
        name=meta["backbone"], pretrained=meta["pretrained"], frozen=meta["frozen"]
    )
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(meta["seed"]))
        if spec.name == "tinyconv":
            backbone = _tinyconv_features()
        else:
            backbone = _torchvision_backbone(spec.name, pretrained=False, cache_dir=None)
        network = EmbeddingNetwork(spec=spec, backbone=backbone, seed=int(meta["seed"]))
    state = torch.load(directory / "weights.pt", map_location="cpu", weights_only=True)
    network.load_state_dict(state)
    network.eval()
    return network
