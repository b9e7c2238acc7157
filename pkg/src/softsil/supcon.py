"""Supervised contrastive loss (single- and two-view) with analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingBatch
from .errors import PreconditionViolation


@dataclass
class SupConParams:
    tau: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


@dataclass
class MultiviewBatch:
    """Embeddings with labels; rows may be one or two views per source sample."""

    embeddings: EmbeddingBatch
    labels: np.ndarray
    view_of: np.ndarray  # row -> source sample index

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.view_of = np.asarray(self.view_of, dtype=np.int64)
        n = self.embeddings.z.shape[0]
        if self.labels.shape != (n,) or self.view_of.shape != (n,):
            raise PreconditionViolation("labels and view_of must have one entry per row")


@dataclass
class SupConResult:
    loss: float
    grad_Z: np.ndarray
    anchors_used: int
    anchors_skipped: int


def supcon_loss(batch: MultiviewBatch, p: SupConParams) -> SupConResult:
    """Mean over anchors of -(1/|P|) sum_p log softmax similarity to p.

    The denominator runs over all other rows (positives included). Anchors
    without a positive are excluded from the mean and counted; grad_Z is the
    exact gradient w.r.t. the (normalized) embedding rows.
    """
    Z = batch.embeddings.z
    if not batch.embeddings.normalized:
        raise PreconditionViolation("supcon_loss requires normalized embeddings")
    n = Z.shape[0]
    if n < 2:
        raise PreconditionViolation("supcon_loss needs at least two rows")

    logits = (Z @ Z.T) / p.tau
    np.fill_diagonal(logits, -np.inf)  # i is never in A(i)

    same = batch.labels[:, None] == batch.labels[None, :]
    np.fill_diagonal(same, False)
    n_pos = same.sum(axis=1)
    used = n_pos > 0
    n_used = int(np.count_nonzero(used))

    row_max = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - row_max)
    denom = expd.sum(axis=1, keepdims=True)
    log_prob = logits - (row_max + np.log(denom))
    softmax = expd / denom

    per_anchor = np.zeros(n)
    masked_lp = np.where(same, log_prob, 0.0)  # avoid -inf * 0 on the diagonal
    per_anchor[used] = -masked_lp[used].sum(axis=1) / n_pos[used]
    loss = float(per_anchor[used].sum() / n_used) if n_used else 0.0

    grad_Z = np.zeros_like(Z)
    if n_used:
        G = np.zeros((n, n))
        G[used] = (softmax[used] - same[used] / n_pos[used, None]) / (p.tau * n_used)
        grad_Z = (G + G.T) @ Z

    return SupConResult(
        loss=loss, grad_Z=grad_Z, anchors_used=n_used, anchors_skipped=n - n_used
    )


def build_two_view_batch(x, labels, augment_fn, encode_fn, rng) -> MultiviewBatch:
    """Two independent stochastic augmentations per input, encoded and stacked.

    augment_fn(row, rng) -> row; encode_fn(matrix) -> normalized EmbeddingBatch.
    View 1 rows come first, then view 2; labels are replicated in order.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    x1 = np.stack([augment_fn(row, rng) for row in x])
    x2 = np.stack([augment_fn(row, rng) for row in x])
    z1 = encode_fn(x1)
    z2 = encode_fn(x2)
    z = np.vstack([z1.z, z2.z])
    b = x.shape[0]
    return MultiviewBatch(
        embeddings=EmbeddingBatch(z, normalized=z1.normalized and z2.normalized),
        labels=np.concatenate([labels, labels]),
        view_of=np.concatenate([np.arange(b), np.arange(b)]),
    )
