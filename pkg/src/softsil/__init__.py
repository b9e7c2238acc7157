"""Representation-learning workbench: differentiable soft silhouette loss,
supervised contrastive learning, baseline objectives, and a desk-scale
training CLI, all with exact analytic gradients."""

from .baselines import center_loss, cross_entropy, proxy_nca
from .embedding import EmbeddingBatch, cosine_distance_matrix, l2_normalize_rows, partition_by_class
from .numerics import finite_diff_grad, log_sum_exp, soft_min
from .sil_loss import (
    SilhouetteParams,
    hard_silhouette,
    soft_silhouette,
    soft_silhouette_embeddings,
)
from .supcon import MultiviewBatch, SupConParams, supcon_loss

__all__ = [
    "EmbeddingBatch",
    "MultiviewBatch",
    "SilhouetteParams",
    "SupConParams",
    "center_loss",
    "cosine_distance_matrix",
    "cross_entropy",
    "finite_diff_grad",
    "hard_silhouette",
    "l2_normalize_rows",
    "log_sum_exp",
    "partition_by_class",
    "proxy_nca",
    "soft_min",
    "soft_silhouette",
    "soft_silhouette_embeddings",
    "supcon_loss",
]

__version__ = "0.1.0"
