"""Training loop, evaluation metrics (top-1/top-5/hard silhouette), the
frozen-feature linear probe, and run artifact writing."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import ClassCenters, ClassProxies, cross_entropy, init_proxies
from .data import AugmentationSpec, BatchPlan, Dataset, augment, balanced_batches
from .embedding import EmbeddingBatch, l2_normalize_rows
from .errors import InvalidConfiguration, NumericalFailure
from .model import AdamW, MlpModel, ModelConfig, load_checkpoint, save_checkpoint
from .objectives import BatchOutputs, CompositeResult, ObjectiveSpec, composite_loss
from .sil_loss import hard_silhouette

METRICS_HEADER = (
    "epoch,total_loss,loss_ce,loss_supcon,loss_sil,loss_center,loss_proxy,"
    "skipped_samples,skipped_anchors,val_top1,val_top5,top5_k,val_silhouette"
)
PROBE_EPOCHS = 100  # fixed, seeded probe for pure-contrastive objectives


@dataclass
class RunConfig:
    objective: ObjectiveSpec
    model: ModelConfig
    plan: BatchPlan = field(default_factory=BatchPlan)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    epochs: int = 30
    lr: float = 0.001
    weight_decay: float = 0.0001
    seed: int = 0
    out_dir: str = "runs/run0"
    dataset_name: str = "synthetic"
    eval_chunk: int = 1024

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfiguration("epochs must be >= 1")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


class Trainer:
    def __init__(self, config: RunConfig, dataset: Dataset):
        self.config = config
        self.dataset = dataset
        spec = config.objective
        init_rng = np.random.default_rng([config.seed, 0])
        self.model = MlpModel(config.model, init_rng)
        self.params = self.model.params  # model + auxiliary parameters, one dict
        C = dataset.num_classes
        if spec.needs_classifier:
            f = config.model.feature_dim
            bound = 1.0 / np.sqrt(f)
            self.params["cls_W"] = init_rng.uniform(-bound, bound, size=(f, C))
            self.params["cls_b"] = np.zeros(C)
        if spec.needs_proxies:
            self.params["proxies"] = init_proxies(C, config.model.projection_dim, init_rng).proxies
        if spec.needs_centers:
            self.params["centers"] = np.zeros((C, config.model.feature_dim))
        self.opt = AdamW(lr=config.lr, weight_decay=config.weight_decay)
        self.epoch = 0
        self.total_skipped_samples = 0
        self.total_skipped_anchors = 0
        self.step_seconds: list[float] = []

    # -- training ---------------------------------------------------------

    def run_epoch(self) -> dict:
        cfg = self.config
        spec = cfg.objective
        rng = np.random.default_rng([cfg.seed, self.epoch, 1])
        batches = balanced_batches(self.dataset.y, self.dataset.train_idx, cfg.plan, rng)
        sums: dict[str, float] = {}
        total = 0.0
        skipped_samples = skipped_anchors = 0
        for idx in batches:
            t0 = time.perf_counter()
            res = self.train_step(idx, rng)
            self.step_seconds.append(time.perf_counter() - t0)
            if not np.isfinite(res.loss):
                raise NumericalFailure(
                    f"non-finite loss at epoch {self.epoch}; batch indices {idx.tolist()}; "
                    f"components {res.components}"
                )
            total += res.loss
            for k, v in res.components.items():
                sums[k] = sums.get(k, 0.0) + v
            skipped_samples += res.skipped_samples
            skipped_anchors += res.skipped_anchors
        n = len(batches)
        self.total_skipped_samples += skipped_samples
        self.total_skipped_anchors += skipped_anchors
        self.epoch += 1
        return {
            "total_loss": total / n,
            "components": {k: v / n for k, v in sums.items()},
            "skipped_samples": skipped_samples,
            "skipped_anchors": skipped_anchors,
        }

    def train_step(self, idx: np.ndarray, rng: np.random.Generator) -> CompositeResult:
        cfg = self.config
        spec = cfg.objective
        x_raw = self.dataset.x[idx]
        y = self.dataset.y[idx]
        x1 = self._augment_batch(x_raw, rng)
        f1, p1, tape1 = self.model.forward(x1, "train", rng)
        out = BatchOutputs(
            labels=y,
            features1=f1,
            projections1=p1,
            num_classes=self.dataset.num_classes,
            cls_W=self.params.get("cls_W"),
            cls_b=self.params.get("cls_b"),
            proxies=self._normalized_proxies(),
            centers=self._centers(),
        )
        tape2 = None
        if spec.needs_two_views:
            x2 = self._augment_batch(x_raw, rng)
            f2, p2, tape2 = self.model.forward(x2, "train", rng)
            out.features2, out.projections2 = f2, p2

        res = composite_loss(spec, out)

        grads = self.model.backward(tape1, res.grad_features1, res.grad_projections1)
        if tape2 is not None and (res.grad_features2 is not None or res.grad_projections2 is not None):
            for k, v in self.model.backward(tape2, res.grad_features2, res.grad_projections2).items():
                grads[k] = grads[k] + v
        if res.grad_cls_W is not None:
            grads["cls_W"] = res.grad_cls_W
            grads["cls_b"] = res.grad_cls_b
        if res.grad_proxies is not None:
            grads["proxies"] = res.grad_proxies

        self.opt.step(self.params, grads)
        if "proxies" in grads:  # keep proxy rows on the unit sphere
            p = self.params["proxies"]
            p /= np.linalg.norm(p, axis=1, keepdims=True)
        if res.center_update is not None:
            self.params["centers"] -= spec.center_lr * res.center_update
        self.model.bump_version()
        return res

    def _augment_batch(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        aug = self.config.augmentation
        if not aug.enabled:
            return x
        return np.stack([augment(row, aug, rng, self.dataset.image_shape) for row in x])

    def _normalized_proxies(self):
        if "proxies" not in self.params:
            return None
        return ClassProxies(self.params["proxies"])

    def _centers(self):
        if "centers" not in self.params:
            return None
        return ClassCenters(self.params["centers"], self.config.objective.center_lr)

    # -- evaluation -------------------------------------------------------

    def _forward_eval(self, x: np.ndarray):
        feats, projs = [], []
        for start in range(0, x.shape[0], self.config.eval_chunk):
            f, p, _ = self.model.forward(x[start : start + self.config.eval_chunk], "eval")
            feats.append(f)
            projs.append(p.z)
        return np.vstack(feats), EmbeddingBatch(np.vstack(projs), normalized=True)

    def evaluate(self, split: str) -> dict:
        """top-1 / top-k accuracy plus hard silhouette on normalized projections.

        Accuracy uses one protocol for every objective: a seeded linear probe
        fit on frozen train features. This measures representation quality on
        an equal footing whether or not the objective trains a classifier head,
        proxies, or neither."""
        x, y = self.dataset.split(split)
        features, projections = self._forward_eval(x)
        W, b = self._fit_probe()
        logits = features @ W + b
        C = self.dataset.num_classes
        k = min(5, C)
        top1, topk = topk_accuracy(logits, y, k)
        sil, _ = hard_silhouette(projections, y, C)
        return {"top1": top1, "top5": topk, "top5_k": k, "silhouette": sil}

    def _fit_probe(self):
        """Seeded fixed-length softmax-regression probe on frozen train features."""
        x, y = self.dataset.split("train")
        features, _ = self._forward_eval(x)
        C = self.dataset.num_classes
        W = np.zeros((features.shape[1], C))
        b = np.zeros(C)
        probe_params = {"W": W, "b": b}
        opt = AdamW(lr=0.05, weight_decay=0.0)
        for _ in range(PROBE_EPOCHS):
            logits = features @ probe_params["W"] + probe_params["b"]
            _, grad_logits = cross_entropy(logits, y)
            opt.step(
                probe_params,
                {"W": features.T @ grad_logits, "b": grad_logits.sum(axis=0)},
            )
        return probe_params["W"], probe_params["b"]


def topk_accuracy(logits: np.ndarray, y: np.ndarray, k: int):
    """Stable argsort of negated logits: ties broken by lower class index."""
    order = np.argsort(-logits, axis=1, kind="stable")
    top1 = float(np.mean(order[:, 0] == y))
    topk = float(np.mean(np.any(order[:, :k] == y[:, None], axis=1)))
    return top1, topk


def train(config: RunConfig, dataset: Dataset, resume_from: str | None = None) -> dict:
    """Run training end to end, writing metrics.csv (crash-safe append),
    timings.csv, checkpoint.bin per epoch, and summary.json at the end."""
    os.makedirs(config.out_dir, exist_ok=True)
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    timings_path = os.path.join(config.out_dir, "timings.csv")
    ckpt_path = os.path.join(config.out_dir, "checkpoint.bin")

    trainer = Trainer(config, dataset)
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.seed != config.seed:
            raise InvalidConfiguration(
                f"checkpoint seed {ckpt.seed} does not match config seed {config.seed}"
            )
        for name, arr in ckpt.params.items():
            # in-place so the model and the optimizer keep sharing the arrays
            trainer.params[name][...] = arr
        trainer.opt.t = ckpt.opt_t
        trainer.opt.m = {k: v.copy() for k, v in ckpt.opt_m.items()}
        trainer.opt.v = {k: v.copy() for k, v in ckpt.opt_v.items()}
        trainer.epoch = ckpt.epoch
        trainer.model.bump_version()
    else:
        with open(metrics_path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")
        with open(timings_path, "w") as fh:
            fh.write("epoch,wall_seconds\n")

    while trainer.epoch < config.epochs:
        t0 = time.perf_counter()
        stats = trainer.run_epoch()
        val = trainer.evaluate("val")
        wall = time.perf_counter() - t0
        comp = stats["components"]
        row = ",".join(
            [str(trainer.epoch)]
            + [_fmt(v) for v in (
                stats["total_loss"],
                comp.get("ce", 0.0),
                comp.get("supcon", 0.0),
                comp.get("sil", 0.0),
                comp.get("center", 0.0),
                comp.get("proxy", 0.0),
            )]
            + [str(stats["skipped_samples"]), str(stats["skipped_anchors"])]
            + [_fmt(val["top1"]), _fmt(val["top5"]), str(val["top5_k"]), _fmt(val["silhouette"])]
        )
        with open(metrics_path, "a") as fh:
            fh.write(row + "\n")
        with open(timings_path, "a") as fh:
            fh.write(f"{trainer.epoch},{wall:.6f}\n")
        save_checkpoint(ckpt_path, trainer.params, trainer.opt, trainer.epoch, config.seed)

    test = trainer.evaluate("test")
    summary = {
        "schema_version": 1,
        "dataset": config.dataset_name,
        "objective": config.objective.tag,
        "seed": config.seed,
        "epochs": config.epochs,
        "test_top1": test["top1"],
        "test_top5": test["top5"],
        "top5_k": test["top5_k"],
        "test_silhouette": test["silhouette"],
        "skipped_samples": trainer.total_skipped_samples,
        "skipped_anchors": trainer.total_skipped_anchors,
        "mean_step_seconds": float(np.mean(trainer.step_seconds)) if trainer.step_seconds else 0.0,
        "config": {
            "lr": config.lr,
            "weight_decay": config.weight_decay,
            "dropout": config.model.dropout_rate,
            "p_classes": config.plan.p_classes,
            "k_samples": config.plan.k_samples,
            "lambda_sil": config.objective.lambda_sil,
            "lambda_ce": config.objective.lambda_ce,
            "tau": config.objective.supcon.tau,
            "tau_s": config.objective.sil.tau_s,
            "tau_m": config.objective.sil.tau_m,
            "encoder_widths": list(config.model.encoder_widths),
            "head_hidden": config.model.head_hidden,
            "embed_dim": config.model.embed_dim,
        },
    }
    with open(os.path.join(config.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
