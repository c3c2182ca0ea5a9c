"""Open-set animal re-identification with Siamese embedding networks.

Pipeline: catalog a directory-per-identity image dataset, split it per
identity 80:10:10, train a frozen-backbone embedding head with contrastive
or triplet loss, enroll one anchor per identity into a gallery, and match
query images against it with a distance threshold (UNKNOWN beyond it).
"""

from .catalog import (
    DatasetCatalog,
    ImageRecord,
    PhotoType,
    SplitManifest,
    View,
    filter_min_images,
    load_manifest,
    save_manifest,
    scan_dataset,
    select_view,
    stratified_split,
)
from .errors import ReidError
from .gallery import (
    DEFAULT_THRESHOLD,
    UNKNOWN,
    Gallery,
    MatchResult,
    build_gallery,
    identify,
    load_gallery,
    match_embedding,
    save_gallery,
    select_anchors,
)
from .losses import (
    LossConfig,
    contrastive_from_embeddings,
    contrastive_loss,
    embedding_distances,
    triplet_from_embeddings,
    triplet_loss,
)
from .metrics import MetricsReport, compute_f1, evaluate, write_report
from .model import (
    EMBEDDING_DIM,
    BackboneSpec,
    EmbeddingNetwork,
    build_network,
    embed,
    embed_batch,
    load_checkpoint,
    pairwise_distance,
    save_checkpoint,
)
from .sampling import (
    AugmentationKind,
    PairSample,
    TripletSample,
    augment,
    expand_with_augmentation,
    load_image,
    load_image_file,
    make_pairs,
    make_triplets,
)
from .seeding import derive_seed
from .synth import generate_synthetic_dataset
from .training import (
    ExperimentConfig,
    ExperimentResult,
    TrainingHistory,
    expand_sweep,
    load_sweep_file,
    run_sweep,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentationKind",
    "BackboneSpec",
    "DEFAULT_THRESHOLD",
    "DatasetCatalog",
    "EMBEDDING_DIM",
    "EmbeddingNetwork",
    "ExperimentConfig",
    "ExperimentResult",
    "Gallery",
    "ImageRecord",
    "LossConfig",
    "MatchResult",
    "MetricsReport",
    "PairSample",
    "PhotoType",
    "ReidError",
    "SplitManifest",
    "TrainingHistory",
    "TripletSample",
    "UNKNOWN",
    "View",
    "augment",
    "build_gallery",
    "build_network",
    "compute_f1",
    "contrastive_from_embeddings",
    "contrastive_loss",
    "derive_seed",
    "embed",
    "embed_batch",
    "embedding_distances",
    "evaluate",
    "expand_sweep",
    "expand_with_augmentation",
    "filter_min_images",
    "generate_synthetic_dataset",
    "identify",
    "load_checkpoint",
    "load_gallery",
    "load_image",
    "load_image_file",
    "load_manifest",
    "load_sweep_file",
    "make_pairs",
    "make_triplets",
    "match_embedding",
    "pairwise_distance",
    "run_sweep",
    "save_checkpoint",
    "save_gallery",
    "save_manifest",
    "scan_dataset",
    "select_view",
    "stratified_split",
    "train",
    "triplet_from_embeddings",
    "triplet_loss",
    "write_report",
]
