"""Comparison objectives: cross-entropy, Center Loss, Proxy-NCA, all with
analytic gradients for every learnable part."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingBatch
from .errors import InvalidConfiguration, InvalidLabel, PreconditionViolation, ShapeError


@dataclass
class ClassCenters:
    centers: np.ndarray  # C x d
    learning_rate_centers: float = 0.5


@dataclass
class ClassProxies:
    proxies: np.ndarray  # C x d, unit rows

    def __post_init__(self):
        self.proxies = np.asarray(self.proxies, dtype=np.float64)
        norms = np.linalg.norm(self.proxies, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise PreconditionViolation("proxy rows must be unit norm")


def init_proxies(num_classes: int, dim: int, rng: np.random.Generator) -> ClassProxies:
    """Seeded unit-Gaussian draw, rows normalized."""
    p = rng.normal(size=(num_classes, dim))
    return ClassProxies(p / np.linalg.norm(p, axis=1, keepdims=True))


def init_centers(num_classes: int, dim: int, learning_rate_centers: float = 0.5) -> ClassCenters:
    return ClassCenters(np.zeros((num_classes, dim)), learning_rate_centers)


def cross_entropy(logits: np.ndarray, y: np.ndarray):
    """Softmax negative log-likelihood, mean over the batch; stable via max-shift.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs labels {y.shape}")
    B, C = logits.shape
    if y.min() < 0 or y.max() >= C:
        raise InvalidLabel(f"labels out of range [0, {C})")
    row_max = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - row_max)
    denom = expd.sum(axis=1, keepdims=True)
    log_prob = logits - (row_max + np.log(denom))
    loss = -float(np.mean(log_prob[np.arange(B), y]))
    grad = expd / denom
    grad[np.arange(B), y] -= 1.0
    return loss, grad / B


def center_loss(features: np.ndarray, y: np.ndarray, c: ClassCenters):
    """(1/2B) sum ||z_i - c_{y_i}||^2 plus the per-class mean-residual update.

    The update is applied by the trainer with the separate center learning
    rate, outside the main optimizer.
    """
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    B = features.shape[0]
    resid = features - c.centers[y]
    loss = float(np.sum(resid**2)) / (2 * B)
    grad_features = resid / B

    update = np.zeros_like(c.centers)
    for cls in np.unique(y):
        members = y == cls
        update[cls] = c.centers[cls] - features[members].mean(axis=0)
    return loss, grad_features, update


def proxy_nca(embeddings: EmbeddingBatch, y: np.ndarray, p: ClassProxies):
    """Original proxy formulation: positive excluded from the denominator.

    loss_i = d(z_i, p_{y_i}) + log sum_{c != y_i} exp(-d(z_i, p_c)), with d the
    cosine distance. Returns (loss, grad_Z, grad_proxies).
    """
    if not embeddings.normalized:
        raise PreconditionViolation("proxy_nca requires normalized embeddings")
    Z = embeddings.z
    y = np.asarray(y, dtype=np.int64)
    P = p.proxies
    C = P.shape[0]
    if C < 2:
        raise InvalidConfiguration("proxy_nca needs at least two classes of proxies")

    B = Z.shape[0]
    d = 1.0 - Z @ P.T  # B x C
    neg = np.ones((B, C), dtype=bool)
    neg[np.arange(B), y] = False

    scores = np.where(neg, -d, -np.inf)
    row_max = scores.max(axis=1, keepdims=True)
    expd = np.exp(scores - row_max)
    denom = expd.sum(axis=1, keepdims=True)
    loss = float(np.mean(d[np.arange(B), y] + row_max[:, 0] + np.log(denom[:, 0])))

    # dloss/dd: +1 at the positive proxy, -softmax over negatives elsewhere
    T = -expd / denom
    T[np.arange(B), y] = 1.0
    T /= B
    grad_Z = -T @ P
    grad_proxies = -T.T @ Z
    return loss, grad_Z, grad_proxies
