"""Skeleton-image contrastive pretraining pipeline for video person ReID.

Thin python surface over the C++ core: tensor-free numpy wrappers for the
main operations (losses, ranking metrics, positional encodings), plus the
dataset generator and a one-call train/eval pipeline.
"""

from ._core import (
    batch_hard_triplet,
    contrastive_losses,
    csip_loss,
    evaluate,
    generate_dataset,
    gradcheck,
    intra_id_pool,
    laplacian_pe,
    lr_at,
    pairwise_distances,
    run_pipeline,
    softmax,
)

__all__ = [
    "batch_hard_triplet",
    "contrastive_losses",
    "csip_loss",
    "evaluate",
    "generate_dataset",
    "gradcheck",
    "intra_id_pool",
    "laplacian_pe",
    "lr_at",
    "pairwise_distances",
    "run_pipeline",
    "softmax",
]

__version__ = "0.1.0"
