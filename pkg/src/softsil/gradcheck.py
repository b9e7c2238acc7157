"""Finite-difference verification of every analytic gradient in the package:
each loss standalone, each composite objective, and end-to-end through a tiny
model. The central-difference oracle is the only trusted reference here."""

from __future__ import annotations

import zlib

import numpy as np

from .baselines import ClassCenters, ClassProxies, center_loss, cross_entropy, proxy_nca
from .errors import DegenerateInput
from .embedding import (
    EmbeddingBatch,
    cosine_distance_matrix,
    l2_normalize_backward,
    l2_normalize_rows,
    partition_by_class,
)
from .model import MlpModel, ModelConfig
from .objectives import BatchOutputs, ObjectiveSpec, composite_loss
from .sil_loss import SilhouetteParams, soft_silhouette, soft_silhouette_grad_embeddings
from .supcon import MultiviewBatch, SupConParams, supcon_loss
from .numerics import finite_diff_grad, rel_error

DEFAULT_TOL = 1e-4
DEFAULT_H = 1e-5
# Denominator floor for the relative error: entries below this magnitude are
# held to the absolute tolerance tol * floor (1e-8 by default) instead of a
# relative one. Central differences of an O(1) loss carry ~1e-9 rounding
# noise, and soft-min tails legitimately produce exponentially small exact
# gradients the oracle cannot resolve relatively.
NOISE_FLOOR = 1e-4


def _balanced_labels(rng, n, c):
    y = np.arange(n) % c
    rng.shuffle(y)
    return y


def _sil_setup(rng):
    b = int(rng.integers(8, 17))
    c = int(rng.integers(2, 5))
    y = _balanced_labels(rng, b, c)
    part = partition_by_class(y, c)
    params = SilhouetteParams(
        tau_s=float(rng.uniform(0.05, 0.3)), tau_m=float(rng.uniform(0.02, 0.2))
    )
    return b, c, y, part, params


def sil_grad_D(rng):
    b, c, y, part, params = _sil_setup(rng)
    D = rng.uniform(0.0, 2.0, size=(b, b))
    np.fill_diagonal(D, 0.0)

    def f(d):
        return soft_silhouette(d, part, params).loss

    return f, D, soft_silhouette(D, part, params).grad_D


def sil_embeddings(rng):
    b, c, y, part, params = _sil_setup(rng)
    d = int(rng.integers(3, 9))
    Z = rng.uniform(-1.0, 1.0, size=(b, d)) + 0.5 * np.sign(rng.standard_normal((b, d)))

    def f(z_raw):
        batch = l2_normalize_rows(z_raw)
        return soft_silhouette(cosine_distance_matrix(batch), part, params).loss

    batch = l2_normalize_rows(Z)
    res = soft_silhouette(cosine_distance_matrix(batch), part, params)
    grad_norm = soft_silhouette_grad_embeddings(res.grad_D, batch.z)
    return f, Z, l2_normalize_backward(Z, grad_norm)


def _supcon_case(rng, two_view):
    b = int(rng.integers(6, 13))
    c = int(rng.integers(2, 5))
    y = _balanced_labels(rng, b, c)
    if two_view:
        y = np.concatenate([y, y])
        view_of = np.concatenate([np.arange(b), np.arange(b)])
        n = 2 * b
    else:
        view_of = np.arange(b)
        n = b
    d = int(rng.integers(3, 9))
    Z = rng.uniform(-1.0, 1.0, size=(n, d)) + 0.5 * np.sign(rng.standard_normal((n, d)))
    params = SupConParams(tau=float(rng.uniform(0.05, 0.5)))

    def f(z_raw):
        batch = MultiviewBatch(l2_normalize_rows(z_raw), y, view_of)
        return supcon_loss(batch, params).loss

    batch = MultiviewBatch(l2_normalize_rows(Z), y, view_of)
    res = supcon_loss(batch, params)
    return f, Z, l2_normalize_backward(Z, res.grad_Z)


def supcon_1view(rng):
    return _supcon_case(rng, two_view=False)


def supcon_2view(rng):
    return _supcon_case(rng, two_view=True)


def ce_logits(rng):
    b = int(rng.integers(4, 17))
    c = int(rng.integers(2, 9))
    y = rng.integers(0, c, size=b)
    logits = rng.uniform(-2.0, 2.0, size=(b, c))

    def f(lg):
        return cross_entropy(lg, y)[0]

    return f, logits, cross_entropy(logits, y)[1]


def center_features(rng):
    b = int(rng.integers(4, 17))
    c = int(rng.integers(2, 6))
    d = int(rng.integers(3, 9))
    y = rng.integers(0, c, size=b)
    centers = ClassCenters(rng.standard_normal((c, d)))
    feats = rng.standard_normal((b, d))

    def f(x):
        return center_loss(x, y, centers)[0]

    return f, feats, center_loss(feats, y, centers)[1]


def _proxy_case(rng):
    b = int(rng.integers(4, 13))
    c = int(rng.integers(2, 6))
    d = int(rng.integers(3, 9))
    y = rng.integers(0, c, size=b)
    Z = rng.uniform(-1.0, 1.0, size=(b, d)) + 0.5 * np.sign(rng.standard_normal((b, d)))
    P = rng.uniform(-1.0, 1.0, size=(c, d)) + 0.5 * np.sign(rng.standard_normal((c, d)))
    return b, c, y, Z, P


def proxy_embeddings(rng):
    b, c, y, Z, P = _proxy_case(rng)
    proxies = ClassProxies(l2_normalize_rows(P).z)

    def f(z_raw):
        return proxy_nca(l2_normalize_rows(z_raw), y, proxies)[0]

    _, grad_Z, _ = proxy_nca(l2_normalize_rows(Z), y, proxies)
    return f, Z, l2_normalize_backward(Z, grad_Z)


def proxy_proxies(rng):
    b, c, y, Z, P = _proxy_case(rng)
    emb = l2_normalize_rows(Z)

    def f(p_raw):
        return proxy_nca(emb, y, ClassProxies(l2_normalize_rows(p_raw).z))[0]

    _, _, grad_P = proxy_nca(emb, y, ClassProxies(l2_normalize_rows(P).z))
    return f, P, l2_normalize_backward(P, grad_P)


# -- end-to-end composites -------------------------------------------------


def _flatten(params, names):
    return np.concatenate([params[n].ravel() for n in names])


def _unflatten(vec, shapes, names):
    out = {}
    off = 0
    for n in names:
        size = int(np.prod(shapes[n]))
        out[n] = vec[off : off + size].reshape(shapes[n])
        off += size
    return out


def _composite_target(tag):
    def build(rng):
        spec = ObjectiveSpec(
            tag=tag,
            lambda_sil=0.7,
            lambda_ce=0.8,
            center_weight=0.01,
            sil=SilhouetteParams(tau_s=0.15, tau_m=0.1),
            supcon=SupConParams(tau=0.2),
        )
        c = 3
        b = 9
        in_dim = 3
        cfg = ModelConfig(
            input_dim=in_dim, encoder_widths=(6, 4), head_hidden=4, embed_dim=3,
            dropout_rate=0.2,
        )
        model = MlpModel(cfg, rng)
        for name in model.params:  # nonzero biases keep rows away from dead relus
            if name.endswith("_b"):
                model.params[name][:] = rng.uniform(-0.2, 0.2, size=model.params[name].shape)
        params = dict(model.params)
        if spec.needs_classifier:
            params["cls_W"] = rng.uniform(-0.5, 0.5, size=(cfg.feature_dim, c))
            params["cls_b"] = rng.uniform(-0.1, 0.1, size=c)
        if spec.needs_proxies:
            params["proxies_raw"] = rng.standard_normal((c, cfg.projection_dim))
        centers = ClassCenters(rng.standard_normal((c, cfg.feature_dim))) if spec.needs_centers else None

        y = _balanced_labels(rng, b, c)

        # Reject instances with a rectifier pre-activation or a projection norm
        # near zero: the loss is non-smooth (or undefined) there and the
        # central-difference oracle breaks down.
        def _margin(x1, x2, drop_seed):
            drop_rng = np.random.default_rng(drop_seed)
            try:
                _, proj1, t1 = model.forward(x1, "train", drop_rng)
                pres = list(t1.relu_pres)
                norms = [np.linalg.norm(t1.p_raw, axis=1)]
                if spec.needs_two_views:
                    _, proj2, t2 = model.forward(x2, "train", drop_rng)
                    pres += t2.relu_pres
                    norms.append(np.linalg.norm(t2.p_raw, axis=1))
            except DegenerateInput:
                return 0.0
            return min(
                min(float(np.min(np.abs(p))) for p in pres),
                min(float(np.min(n)) for n in norms),
            )

        for _ in range(200):
            x1 = rng.uniform(0.0, 1.0, size=(b, in_dim))
            x2 = rng.uniform(0.0, 1.0, size=(b, in_dim))
            drop_seed = int(rng.integers(0, 2**31))
            if _margin(x1, x2, drop_seed) > 1e-3:
                break

        names = sorted(params)
        shapes = {n: params[n].shape for n in names}

        def run(vec, want_grads):
            p = _unflatten(vec, shapes, names)
            for k in model.params:
                model.params[k] = p[k]
            model.bump_version()
            # fixed dropout masks: same seed on every evaluation
            drop_rng = np.random.default_rng(drop_seed)
            f1, p1, tape1 = model.forward(x1, "train", drop_rng)
            out = BatchOutputs(
                labels=y, features1=f1, projections1=p1, num_classes=c,
                cls_W=p.get("cls_W"), cls_b=p.get("cls_b"),
                proxies=ClassProxies(l2_normalize_rows(p["proxies_raw"]).z)
                if "proxies_raw" in p else None,
                centers=centers,
            )
            tape2 = None
            if spec.needs_two_views:
                f2, p2, tape2 = model.forward(x2, "train", drop_rng)
                out.features2, out.projections2 = f2, p2
            res = composite_loss(spec, out)
            if not want_grads:
                return res.loss
            grads = model.backward(tape1, res.grad_features1, res.grad_projections1)
            if tape2 is not None and (res.grad_features2 is not None or res.grad_projections2 is not None):
                for k, v in model.backward(tape2, res.grad_features2, res.grad_projections2).items():
                    grads[k] = grads[k] + v
            if res.grad_cls_W is not None:
                grads["cls_W"], grads["cls_b"] = res.grad_cls_W, res.grad_cls_b
            if res.grad_proxies is not None:
                grads["proxies_raw"] = l2_normalize_backward(p["proxies_raw"], res.grad_proxies)
            return res.loss, _flatten(grads, names)

        x0 = _flatten(params, names)
        _, analytic = run(x0, want_grads=True)

        def f(vec):
            return run(vec, want_grads=False)

        return f, x0, analytic

    return build


TARGETS = {
    "sil_grad_D": sil_grad_D,
    "sil_embeddings": sil_embeddings,
    "supcon_1view": supcon_1view,
    "supcon_2view": supcon_2view,
    "cross_entropy": ce_logits,
    "center_loss": center_features,
    "proxy_nca_embeddings": proxy_embeddings,
    "proxy_nca_proxies": proxy_proxies,
    **{f"e2e_{tag}": _composite_target(tag)
       for tag in ("ce", "ce_sil", "supcon", "supcon2", "ce_sil_supcon2", "proxy_nca", "center")},
}

SCOPES = {
    "sil": ["sil_grad_D", "sil_embeddings"],
    "supcon": ["supcon_1view", "supcon_2view"],
    "baselines": ["cross_entropy", "center_loss", "proxy_nca_embeddings", "proxy_nca_proxies"],
    "e2e": [t for t in TARGETS if t.startswith("e2e_")],
    "all": list(TARGETS),
}


def run_target(name, instances=100, h=DEFAULT_H, seed=0, corruption=0.0):
    """Worst relative error over seeded instances; corruption shifts the
    analytic gradient to let tests exercise the failure path."""
    worst = 0.0
    name_tag = zlib.crc32(name.encode())
    for k in range(instances):
        rng = np.random.default_rng([seed, name_tag, k])
        f, x0, analytic = TARGETS[name](rng)
        if corruption:
            analytic = analytic + corruption
        numeric = finite_diff_grad(f, x0.copy(), h)
        worst = max(worst, rel_error(analytic, numeric, floor=NOISE_FLOOR))
    return worst


def run(scope="all", instances=100, h=DEFAULT_H, tol=DEFAULT_TOL, seed=0, printer=print):
    """Check every target in scope; returns (all_passed, per-target errors)."""
    results = {}
    ok = True
    for name in SCOPES[scope]:
        err = run_target(name, instances=instances, h=h, seed=seed)
        passed = err <= tol
        ok = ok and passed
        results[name] = err
        printer(f"{'PASS' if passed else 'FAIL'}  {name:<24s} worst rel err {err:.3e}  (tol {tol:g})")
    return ok, results
