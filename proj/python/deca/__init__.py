"""Capsule autoencoder for multi-view 3D pose estimation."""

from ._deca import (
    Dataset,
    DecaError,
    Trainer,
    cluster_purity,
    default_config,
    generate_dataset,
    load_checkpoint,
    map_at_threshold,
    mpjpe_mm,
    procrustes_align,
    validate_config,
)

__all__ = [
    "Dataset",
    "DecaError",
    "Trainer",
    "cluster_purity",
    "default_config",
    "generate_dataset",
    "load_checkpoint",
    "map_at_threshold",
    "mpjpe_mm",
    "procrustes_align",
    "validate_config",
]
