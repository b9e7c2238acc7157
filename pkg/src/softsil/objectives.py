"""Composite training objectives: the seven trainable strategies and the
machinery that assembles their losses and gradients at both attachment points
(encoder features and normalized projections)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import ClassCenters, ClassProxies, center_loss, cross_entropy, proxy_nca
from .embedding import EmbeddingBatch, partition_by_class
from .errors import InvalidConfiguration, PreconditionViolation
from .sil_loss import SilhouetteParams, soft_silhouette_embeddings
from .supcon import MultiviewBatch, SupConParams, supcon_loss

OBJECTIVE_TAGS = ("ce", "ce_sil", "supcon", "supcon2", "ce_sil_supcon2", "proxy_nca", "center")


@dataclass
class ObjectiveSpec:
    tag: str
    lambda_sil: float = 1.0
    lambda_ce: float = 1.0
    center_weight: float = 0.003
    center_lr: float = 0.5
    sil: SilhouetteParams = field(default_factory=SilhouetteParams)
    supcon: SupConParams = field(default_factory=SupConParams)
    sil_on_both_views: bool = True  # in two-view runs, silhouette over all 2B rows
    strict_positives: bool = False  # fail instead of skipping positive-less anchors

    def __post_init__(self):
        if self.tag not in OBJECTIVE_TAGS:
            raise InvalidConfiguration(f"unknown objective {self.tag!r}, expected one of {OBJECTIVE_TAGS}")
        if min(self.lambda_sil, self.lambda_ce, self.center_weight) < 0:
            raise InvalidConfiguration("objective coefficients must be non-negative")

    @property
    def needs_two_views(self) -> bool:
        return self.tag in ("supcon2", "ce_sil_supcon2")

    @property
    def needs_classifier(self) -> bool:
        return self.tag in ("ce", "ce_sil", "ce_sil_supcon2", "center")

    @property
    def needs_proxies(self) -> bool:
        return self.tag == "proxy_nca"

    @property
    def needs_centers(self) -> bool:
        return self.tag == "center"


@dataclass
class BatchOutputs:
    """Everything a composite objective can attach to, for one batch."""

    labels: np.ndarray
    features1: np.ndarray | None = None
    projections1: EmbeddingBatch | None = None
    features2: np.ndarray | None = None
    projections2: EmbeddingBatch | None = None
    num_classes: int = 0
    cls_W: np.ndarray | None = None
    cls_b: np.ndarray | None = None
    proxies: ClassProxies | None = None
    centers: ClassCenters | None = None


@dataclass
class CompositeResult:
    loss: float
    components: dict
    grad_features1: np.ndarray | None = None
    grad_projections1: np.ndarray | None = None
    grad_features2: np.ndarray | None = None
    grad_projections2: np.ndarray | None = None
    grad_cls_W: np.ndarray | None = None
    grad_cls_b: np.ndarray | None = None
    grad_proxies: np.ndarray | None = None
    center_update: np.ndarray | None = None
    skipped_samples: int = 0
    skipped_anchors: int = 0


def _ce_term(out: BatchOutputs, res: CompositeResult, weight: float) -> float:
    if out.cls_W is None or out.cls_b is None:
        raise InvalidConfiguration("objective needs a classifier head but none was provided")
    logits = out.features1 @ out.cls_W + out.cls_b
    loss, grad_logits = cross_entropy(logits, out.labels)
    grad_logits = weight * grad_logits
    res.grad_cls_W = out.features1.T @ grad_logits
    res.grad_cls_b = grad_logits.sum(axis=0)
    res.grad_features1 = _acc(res.grad_features1, grad_logits @ out.cls_W.T)
    res.components["ce"] = loss
    return weight * loss


def _sil_term(spec: ObjectiveSpec, out: BatchOutputs, res: CompositeResult) -> float:
    if spec.needs_two_views and spec.sil_on_both_views and out.projections2 is not None:
        z = np.vstack([out.projections1.z, out.projections2.z])
        labels = np.concatenate([out.labels, out.labels])
        batch = EmbeddingBatch(z, normalized=True)
        two = True
    else:
        labels, batch, two = out.labels, out.projections1, False
    part = partition_by_class(labels, out.num_classes)
    loss, grad_z, skipped = soft_silhouette_embeddings(batch, part, spec.sil)
    grad_z = spec.lambda_sil * grad_z
    b = out.labels.shape[0]
    if two:
        res.grad_projections1 = _acc(res.grad_projections1, grad_z[:b])
        res.grad_projections2 = _acc(res.grad_projections2, grad_z[b:])
    else:
        res.grad_projections1 = _acc(res.grad_projections1, grad_z)
    res.components["sil"] = loss
    res.skipped_samples += skipped
    return spec.lambda_sil * loss


def _supcon_term(spec: ObjectiveSpec, out: BatchOutputs, res: CompositeResult) -> float:
    if spec.needs_two_views:
        if out.projections2 is None:
            raise InvalidConfiguration(f"objective {spec.tag!r} needs two views per batch")
        z = np.vstack([out.projections1.z, out.projections2.z])
        labels = np.concatenate([out.labels, out.labels])
        b = out.labels.shape[0]
        batch = MultiviewBatch(
            EmbeddingBatch(z, normalized=True),
            labels,
            np.concatenate([np.arange(b), np.arange(b)]),
        )
    else:
        b = None
        batch = MultiviewBatch(
            out.projections1, out.labels, np.arange(out.labels.shape[0])
        )
    result = supcon_loss(batch, spec.supcon)
    if result.anchors_skipped and spec.strict_positives:
        raise PreconditionViolation(f"{result.anchors_skipped} anchors have no positive in the batch")
    if b is None:
        res.grad_projections1 = _acc(res.grad_projections1, result.grad_Z)
    else:
        res.grad_projections1 = _acc(res.grad_projections1, result.grad_Z[:b])
        res.grad_projections2 = _acc(res.grad_projections2, result.grad_Z[b:])
    res.components["supcon"] = result.loss
    res.skipped_anchors += result.anchors_skipped
    return result.loss


def composite_loss(spec: ObjectiveSpec, out: BatchOutputs) -> CompositeResult:
    """Total loss plus gradients at every attachment point, components reported
    separately. The silhouette and contrastive terms share the 2B projection
    rows in two-view runs; cross-entropy always reads view-1 features."""
    res = CompositeResult(loss=0.0, components={})
    total = 0.0
    tag = spec.tag

    if tag in ("ce", "ce_sil", "center"):
        total += _ce_term(out, res, 1.0)
    elif tag == "ce_sil_supcon2":
        total += _ce_term(out, res, spec.lambda_ce)

    if tag in ("ce_sil", "ce_sil_supcon2"):
        total += _sil_term(spec, out, res)

    if tag in ("supcon", "supcon2", "ce_sil_supcon2"):
        total += _supcon_term(spec, out, res)

    if tag == "proxy_nca":
        if out.proxies is None:
            raise InvalidConfiguration("proxy_nca objective needs proxies")
        loss, grad_Z, grad_P = proxy_nca(out.projections1, out.labels, out.proxies)
        res.grad_projections1 = _acc(res.grad_projections1, grad_Z)
        res.grad_proxies = grad_P
        res.components["proxy"] = loss
        total += loss

    if tag == "center":
        if out.centers is None:
            raise InvalidConfiguration("center objective needs class centers")
        loss, grad_f, update = center_loss(out.features1, out.labels, out.centers)
        res.grad_features1 = _acc(res.grad_features1, spec.center_weight * grad_f)
        res.center_update = update
        res.components["center"] = loss
        total += spec.center_weight * loss

    res.loss = total
    return res


def _acc(current, extra):
    return extra if current is None else current + extra
