"""Differentiable soft silhouette loss with exact analytic gradients, plus
the hard (non-relaxed) silhouette used as an evaluation metric.

Per sample: a = mean distance to same-class batch members, b = soft-min over
per-foreign-class mean distances, m = smooth max of (a, b), score = (b-a)/(m+eps).
The loss is the negated mean score. Gradients are closed-form w.r.t. every
entry of the distance matrix; callers chain them through D = 1 - ZZ^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import ClassPartition, EmbeddingBatch, cosine_distance_matrix
from .errors import SingleClassBatch, SingletonClass

try:  # optional compiled core; the numpy path below is the fallback
    from . import _silcore
except ImportError:
    _silcore = None


@dataclass
class SilhouetteParams:
    """Temperatures for the soft-min / smooth-max relaxations.

    Defaults chosen for cosine distances in [0, 2]; all CLI-configurable.
    """

    tau_s: float = 0.1
    tau_m: float = 0.05
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.tau_s <= 0 or self.tau_m <= 0 or self.epsilon <= 0:
            raise ValueError("tau_s, tau_m and epsilon must all be positive")


@dataclass
class SilhouetteTerms:
    """Per-sample intermediates, kept for gradients and diagnostics."""

    skipped: bool
    a: float = np.nan
    foreign_classes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    d_ic: np.ndarray = field(default_factory=lambda: np.empty(0))
    b: float = np.nan
    m_tilde: float = np.nan
    s_tilde: float = np.nan


@dataclass
class SoftSilhouetteResult:
    loss: float
    terms: list
    grad_D: np.ndarray
    skipped: int  # samples excluded because their class is a batch singleton


def intra_class_mean(D: np.ndarray, part: ClassPartition, i: int) -> float:
    """Mean distance from sample i to its same-class batch members."""
    others = part.same_class_others(i)
    if others.size == 0:
        raise SingletonClass(f"sample {i} has no same-class companion in the batch")
    return float(np.mean(D[i, others]))


def inter_class_means(D: np.ndarray, part: ClassPartition, i: int) -> list:
    """(class, mean distance) for every foreign class present, ascending."""
    yi = part.labels[i]
    out = []
    for c in part.present:
        if c == yi:
            continue
        out.append((int(c), float(np.mean(D[i, part.indices[c]]))))
    if not out:
        raise SingleClassBatch("batch contains a single class; no inter-class distances")
    return out


def soft_silhouette(
    D: np.ndarray, part: ClassPartition, p: SilhouetteParams, want_terms: bool = False
) -> SoftSilhouetteResult:
    """Loss, per-sample terms, and the exact gradient w.r.t. D.

    Samples whose class is a batch singleton are skipped (counted), matching
    the balanced sampler's guarantee that this never happens in normal runs.
    The loss excludes the diagonal of D everywhere, so grad_D has a zero
    diagonal and matches the finite-difference oracle entry for entry.
    Per-sample terms are assembled only when `want_terms` is set; the hot
    training path skips them.
    """
    core = _silhouette_core(D, part, p, want_terms=want_terms, diag_is_zero=False)

    # Foreign-class path: dL/dD[i, j] = dL/db_i * W[i, y_j] / n_{y_j}
    grad_D = core.V @ core.onehot.T

    # Same-class path: dL/dD[i, j] = dL/da_i / (n_{y_i} - 1), j != i, same class
    same = core.onehot @ core.onehot.T
    np.fill_diagonal(same, 0.0)
    grad_D += core.u[:, None] * same
    np.fill_diagonal(grad_D, 0.0)

    return SoftSilhouetteResult(
        loss=core.loss, terms=core.terms, grad_D=grad_D, skipped=core.skipped
    )


@dataclass
class _SilhouetteCore:
    """Shared intermediates behind both gradient assemblies."""

    loss: float
    terms: list
    skipped: int
    onehot: np.ndarray
    V: np.ndarray  # dL/d(class mean) spread over soft-min weights, (B, C)
    u: np.ndarray  # same-class coefficient dL/da_i / (n_{y_i} - 1), (B,)


def _silhouette_core(
    D: np.ndarray,
    part: ClassPartition,
    p: SilhouetteParams,
    want_terms: bool,
    diag_is_zero: bool,
) -> _SilhouetteCore:
    B = D.shape[0]
    if len(part.present) < 2:
        raise SingleClassBatch("soft_silhouette requires at least two classes in the batch")

    if _silcore is not None and not want_terms:
        # The kernel always skips j == i, so the diagonal never contributes.
        loss, n_used, V, u, _ = _silcore.silhouette_core(
            np.ascontiguousarray(D),
            np.ascontiguousarray(part.labels),
            np.ascontiguousarray(part.sizes),
            p.tau_s,
            p.tau_m,
            p.epsilon,
        )
        if n_used == 0:
            raise SingletonClass("every sample sits in a singleton class")
        onehot = np.zeros((B, part.num_classes))
        onehot[np.arange(B), part.labels] = 1.0
        return _SilhouetteCore(
            loss=loss, terms=[], skipped=B - n_used, onehot=onehot, V=V, u=u
        )

    y = part.labels
    C = part.num_classes
    sizes = part.sizes
    rows = np.arange(B)
    onehot = np.zeros((B, C))
    onehot[rows, y] = 1.0

    # class_sums[i, c] = sum of D[i, j] over j != i in class c; the diagonal is
    # masked out (not subtracted) so the loss is bitwise independent of it
    if diag_is_zero:
        D_offdiag = D
    else:
        D_offdiag = D.copy()
        np.fill_diagonal(D_offdiag, 0.0)
    class_sums = D_offdiag @ onehot

    sy = sizes[y]
    used = sy >= 2
    n_used = int(np.count_nonzero(used))
    if n_used == 0:
        raise SingletonClass("every sample sits in a singleton class")
    all_used = n_used == B  # the balanced-sampler hot path

    denom_a = np.maximum(sy - 1, 1)
    a = class_sums[rows, y] / denom_a

    # Foreign-class mean distances as a masked (B, C) matrix: entry (i, c) is
    # valid when class c is present in the batch and c != y_i.
    valid = (sizes > 0)[None, :] & (np.arange(C)[None, :] != y[:, None])
    means = class_sums / np.maximum(sizes, 1)[None, :]

    # Soft-min over the valid entries of each row (max-shifted, row-wise).
    neg = np.where(valid, means, np.inf) / -p.tau_s
    row_max = neg.max(axis=1, keepdims=True)
    e = np.exp(neg - row_max)  # exactly 0 at masked entries
    se = e.sum(axis=1, keepdims=True)
    b = -p.tau_s * (row_max[:, 0] + np.log(se[:, 0]))
    W = e / se  # soft-min weights over foreign classes, 0 where invalid

    # Smooth max of the (a, b) pair and its partial derivatives.
    pm = np.maximum(a, b)
    ea = np.exp((a - pm) / p.tau_m)
    eb = np.exp((b - pm) / p.tau_m)
    den = ea + eb
    m = pm + p.tau_m * np.log(den)
    alpha = ea / den  # d m / d a
    beta = eb / den  # d m / d b
    diff = b - a
    q = m + p.epsilon
    s = diff / q
    if not all_used:
        for arr in (a, b, m, alpha, beta, diff, q, s):
            arr[~used] = 0.0
        q[~used] = 1.0  # keep the masked chain-rule terms finite

    terms: list = []
    if want_terms:
        for i in range(B):
            if not used[i]:
                terms.append(SilhouetteTerms(skipped=True))
                continue
            foreign = part.present[part.present != y[i]]
            terms.append(
                SilhouetteTerms(
                    skipped=False,
                    a=float(a[i]),
                    foreign_classes=foreign.copy(),
                    d_ic=means[i, foreign].copy(),
                    b=float(b[i]),
                    m_tilde=float(m[i]),
                    s_tilde=float(s[i]),
                )
            )

    loss = -float(np.sum(s)) / n_used

    # Chain rule: loss -> s -> (a, b) -> (class means) -> D entries.
    gq = -1.0 / n_used / (q * q)
    dL_da = gq * (-q - diff * alpha)
    dL_db = gq * (q - diff * beta)
    if not all_used:
        dL_da[~used] = 0.0
        dL_db[~used] = 0.0

    V = (dL_db[:, None] * W) / np.maximum(sizes, 1)[None, :]
    u = dL_da / denom_a
    return _SilhouetteCore(
        loss=loss, terms=terms, skipped=B - n_used, onehot=onehot, V=V, u=u
    )


def soft_silhouette_grad_embeddings(grad_D: np.ndarray, z_normalized: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. D = 1 - ZZ^T back to the normalized rows Z."""
    return -(grad_D + grad_D.T) @ z_normalized


def soft_silhouette_embeddings(batch: EmbeddingBatch, part: ClassPartition, p: SilhouetteParams):
    """Training fast path: loss and gradient w.r.t. the normalized rows.

    Same loss as soft_silhouette on the cosine distance matrix, but the
    gradient exploits the low-rank structure of grad_D (a soft-min weighted
    class term plus a same-class term), so no second B x B matrix is formed.
    Returns (loss, grad_z, skipped_samples).
    """
    D = cosine_distance_matrix(batch)  # diagonal forced to exactly 0
    if _silcore is not None:
        if len(part.present) < 2:
            raise SingleClassBatch("soft_silhouette requires at least two classes in the batch")
        loss, n_used, _, _, gz = _silcore.silhouette_core(
            D,  # contiguous by construction in cosine_distance_matrix
            np.ascontiguousarray(part.labels),
            np.ascontiguousarray(part.sizes),
            p.tau_s,
            p.tau_m,
            p.epsilon,
            np.ascontiguousarray(batch.z),
        )
        if n_used == 0:
            raise SingletonClass("every sample sits in a singleton class")
        return loss, gz, D.shape[0] - n_used
    core = _silhouette_core(D, part, p, want_terms=False, diag_is_zero=True)
    z = batch.z
    # grad_D = V onehot^T + diag(u)(onehot onehot^T - I) = M onehot^T - diag(u)
    # with M = V + diag(u) onehot, so
    # grad_z = -(grad_D + grad_D^T) Z = -(M (onehot^T Z) + onehot (M^T Z) - 2 u Z)
    M = core.V + core.u[:, None] * core.onehot
    uz = core.u[:, None] * z
    gz = M @ (core.onehot.T @ z) + core.onehot @ (M.T @ z) - 2.0 * uz
    return core.loss, -gz, core.skipped


def hard_silhouette(embeddings: EmbeddingBatch, y: np.ndarray, num_classes: int):
    """Exact silhouette (true min and max) on cosine distances; evaluation only.

    Samples in singleton classes get score 0 and are counted in the mean,
    the common evaluation convention.
    """
    from .embedding import partition_by_class

    part = partition_by_class(np.asarray(y, dtype=np.int64), num_classes)
    if len(part.present) < 2:
        raise SingleClassBatch("hard_silhouette requires at least two classes")
    D = cosine_distance_matrix(embeddings)
    B = D.shape[0]
    per_sample = np.zeros(B)
    for i in range(B):
        others = part.same_class_others(i)
        if others.size == 0:
            continue
        a = float(np.mean(D[i, others]))
        b = min(
            float(np.mean(D[i, part.indices[c]]))
            for c in part.present
            if c != part.labels[i]
        )
        denom = max(a, b)
        per_sample[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(np.mean(per_sample)), per_sample
