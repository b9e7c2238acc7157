"""Embedding geometry: row normalization with its Jacobian, the shared
cosine-distance matrix, and per-class index bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidLabel, PreconditionViolation

NORM_TOL = 1e-9


@dataclass
class EmbeddingBatch:
    """B x d row embeddings plus a flag recording whether rows are unit norm."""

    z: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 2 or self.z.shape[0] < 1 or self.z.shape[1] < 1:
            raise DegenerateInput(f"embedding batch must be a non-empty matrix, got shape {self.z.shape}")


class ClassPartition:
    """Per-class index lists restricted to one batch.

    The hot training path only touches `labels`, `sizes` and `present`; the
    per-class index lists are materialized lazily on first access.
    """

    def __init__(self, labels: np.ndarray, num_classes: int):
        self.labels = labels
        self.num_classes = num_classes
        self.sizes = np.bincount(labels, minlength=num_classes)
        self.present = np.flatnonzero(self.sizes > 0).astype(np.int64)
        self._indices: list | None = None

    @property
    def indices(self) -> list:
        if self._indices is None:
            # One stable argsort groups the batch by class; slice per-class runs.
            order = np.argsort(self.labels, kind="stable")
            bounds = np.concatenate([[0], np.cumsum(self.sizes)])
            self._indices = [
                np.sort(order[bounds[c] : bounds[c + 1]]) for c in range(self.num_classes)
            ]
        return self._indices

    def class_size(self, c: int) -> int:
        return int(self.sizes[c])

    def same_class_others(self, i: int) -> np.ndarray:
        """S(i): same-class batch indices excluding i itself."""
        members = self.indices[self.labels[i]]
        return members[members != i]


def l2_normalize_rows(z: np.ndarray) -> EmbeddingBatch:
    """Divide every row by its Euclidean norm. Rejects near-zero rows."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    bad = np.where(norms <= 1e-12)[0]
    if bad.size > 0:
        raise DegenerateInput(f"row {bad[0]} has near-zero norm, cannot normalize")
    return EmbeddingBatch(z / norms[:, None], normalized=True)


def l2_normalize_backward(z_raw: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. normalized rows back to the raw rows.

    Jacobian of x/|x| is (I - u u^T)/|x| with u = x/|x|.
    """
    z_raw = np.asarray(z_raw, dtype=np.float64)
    norms = np.linalg.norm(z_raw, axis=1, keepdims=True)
    u = z_raw / norms
    return (grad_out - np.sum(grad_out * u, axis=1, keepdims=True) * u) / norms


def cosine_distance_matrix(batch: EmbeddingBatch) -> np.ndarray:
    """D = 1 - Z Z^T on pre-normalized rows; diagonal forced to exactly 0.

    Computed once per batch and shared by the contrastive and silhouette terms.
    """
    if not batch.normalized:
        raise PreconditionViolation("cosine_distance_matrix requires normalized embeddings")
    d = batch.z @ batch.z.T
    np.subtract(1.0, d, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def partition_by_class(y: np.ndarray, num_classes: int) -> ClassPartition:
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1:
        raise InvalidLabel(f"labels must be a vector, got shape {y.shape}")
    if y.size > 0 and (y.min() < 0 or y.max() >= num_classes):
        raise InvalidLabel(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")
    return ClassPartition(labels=y, num_classes=num_classes)
