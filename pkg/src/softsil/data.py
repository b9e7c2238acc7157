"""Datasets and sampling: synthetic Gaussian mixtures, CIFAR-10 binary
ingestion, a generic CSV path, simple augmentations, and the class-balanced
P x K batch sampler."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientClassSamples,
    InvalidConfiguration,
    InvalidLabel,
    MalformedRecord,
    NoData,
)

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3072 channel-major pixel bytes
CIFAR_IMAGE_SHAPE = (3, 32, 32)


@dataclass
class Dataset:
    x: np.ndarray  # N x input width, values in [0, 1]
    y: np.ndarray
    num_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    provenance: str = ""
    image_shape: tuple | None = None  # (C, H, W) when rows are channel-major images

    def split(self, name: str):
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return self.x[idx], self.y[idx]


@dataclass
class SyntheticSpec:
    num_classes: int = 8
    dim: int = 32
    per_class: int = 400
    spread: float = 1.0  # stddev of class centers
    noise: float = 0.5  # within-class stddev
    seed: int = 0

    def __post_init__(self):
        if self.per_class < 2:
            raise InvalidConfiguration("need at least 2 samples per class")
        if self.spread <= 0 or self.noise <= 0:
            raise InvalidConfiguration("spread and noise must be positive")


@dataclass
class AugmentationSpec:
    flip_prob: float = 0.0  # horizontal flip, needs image_shape
    crop_pad: int = 0  # pad-and-crop pixels, needs image_shape
    noise_sigma: float = 0.0  # additive Gaussian, clamped back to [0, 1]

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise InvalidConfiguration("flip_prob must lie in [0, 1]")

    @property
    def enabled(self) -> bool:
        return self.flip_prob > 0 or self.crop_pad > 0 or self.noise_sigma > 0


@dataclass
class BatchPlan:
    p_classes: int = 8
    k_samples: int = 8
    with_replacement: bool = False

    def __post_init__(self):
        if self.p_classes < 2 or self.k_samples < 2:
            raise InvalidConfiguration("need P >= 2 classes and K >= 2 samples per class")

    @property
    def batch_size(self) -> int:
        return self.p_classes * self.k_samples


def _stratified_split(y: np.ndarray, rng: np.random.Generator, fractions=(0.7, 0.15, 0.15)):
    train, val, test = [], [], []
    for c in np.unique(y):
        idx = np.where(y == c)[0]
        rng.shuffle(idx)
        n = idx.size
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        train.append(idx[:n_train])
        val.append(idx[n_train : n_train + n_val])
        test.append(idx[n_train + n_val :])
    return (
        np.sort(np.concatenate(train)),
        np.sort(np.concatenate(val)),
        np.sort(np.concatenate(test)),
    )


def gen_gaussian_mixture(spec: SyntheticSpec) -> Dataset:
    """Seeded isotropic mixture: centers ~ N(0, spread^2), samples = center + noise.

    Values are affinely rescaled into [0, 1] so augmentation clamping behaves
    the same as for image data. Stratified 70/15/15 split.
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.spread, size=(spec.num_classes, spec.dim))
    x = np.vstack(
        [centers[c] + rng.normal(0.0, spec.noise, size=(spec.per_class, spec.dim)) for c in range(spec.num_classes)]
    )
    y = np.repeat(np.arange(spec.num_classes), spec.per_class)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo)
    train, val, test = _stratified_split(y, rng)
    return Dataset(
        x=x,
        y=y,
        num_classes=spec.num_classes,
        train_idx=train,
        val_idx=val,
        test_idx=test,
        provenance=f"synthetic gaussian mixture, seed={spec.seed}",
    )


def _parse_cifar_file(path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
        raise MalformedRecord(
            f"{path}: length {raw.size} is not a positive multiple of {CIFAR_RECORD_BYTES}"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise InvalidLabel(f"{path}: label byte {labels.max()} exceeds 9")
    pixels = records[:, 1:].astype(np.float64) / 255.0
    return pixels, labels


def load_cifar10_binary(data_dir, limit_train: int | None = None, limit_test: int | None = None,
                        val_fraction: float = 0.1, seed: int = 0) -> Dataset:
    """Parse the CIFAR-10 binary batches; a validation carve-out is taken from
    the training files. Optional per-split caps keep runs desk-scale."""
    train_files = sorted(
        f for f in os.listdir(data_dir) if f.startswith("data_batch") and f.endswith(".bin")
    )
    test_file = os.path.join(data_dir, "test_batch.bin")
    if not train_files or not os.path.exists(test_file):
        raise NoData(f"{data_dir} does not contain CIFAR-10 binary batch files")

    xs, ys = [], []
    for f in train_files:
        px, lb = _parse_cifar_file(os.path.join(data_dir, f))
        xs.append(px)
        ys.append(lb)
    x_train = np.vstack(xs)
    y_train = np.concatenate(ys)
    x_test, y_test = _parse_cifar_file(test_file)

    rng = np.random.default_rng(seed)
    if limit_train is not None:
        keep = rng.permutation(x_train.shape[0])[:limit_train]
        keep.sort()
        x_train, y_train = x_train[keep], y_train[keep]
    if limit_test is not None:
        keep = rng.permutation(x_test.shape[0])[:limit_test]
        keep.sort()
        x_test, y_test = x_test[keep], y_test[keep]

    n_train = x_train.shape[0]
    perm = rng.permutation(n_train)
    n_val = int(round(val_fraction * n_train))
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])

    x = np.vstack([x_train, x_test])
    y = np.concatenate([y_train, y_test])
    return Dataset(
        x=x,
        y=y,
        num_classes=10,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=np.arange(n_train, n_train + x_test.shape[0]),
        provenance=f"cifar-10 binary from {data_dir}",
        image_shape=CIFAR_IMAGE_SHAPE,
    )


def load_csv_dataset(path, num_classes: int | None = None, val_fraction: float = 0.15,
                     test_fraction: float = 0.15, seed: int = 0) -> Dataset:
    """Generic pre-featurized ingestion: first column integer label, the rest floats."""
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.size == 0:
        raise NoData(f"{path} contains no rows")
    y = rows[:, 0].astype(np.int64)
    x = rows[:, 1:].astype(np.float64)
    if num_classes is None:
        num_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= num_classes:
        raise InvalidLabel(f"{path}: labels outside [0, {num_classes})")
    rng = np.random.default_rng(seed)
    train, val, test = _stratified_split(y, rng, (1 - val_fraction - test_fraction, val_fraction, test_fraction))
    return Dataset(x=x, y=y, num_classes=num_classes, train_idx=train, val_idx=val,
                   test_idx=test, provenance=f"csv from {path}")


def augment(row: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator,
            image_shape: tuple | None = None) -> np.ndarray:
    """Flip / pad-and-crop / additive noise with seeded randomness.

    Flip and crop need a channel-major image shape; otherwise only noise applies.
    Output stays in [0, 1]."""
    out = np.asarray(row, dtype=np.float64).copy()
    if image_shape is not None and (spec.flip_prob > 0 or spec.crop_pad > 0):
        c, h, w = image_shape
        img = out.reshape(c, h, w)
        if spec.flip_prob > 0 and rng.random() < spec.flip_prob:
            img = img[:, :, ::-1]
        if spec.crop_pad > 0:
            pad = spec.crop_pad
            padded = np.zeros((c, h + 2 * pad, w + 2 * pad))
            padded[:, pad : pad + h, pad : pad + w] = img
            dy = rng.integers(0, 2 * pad + 1)
            dx = rng.integers(0, 2 * pad + 1)
            img = padded[:, dy : dy + h, dx : dx + w]
        out = img.reshape(-1)
    if spec.noise_sigma > 0:
        out = np.clip(out + rng.normal(0.0, spec.noise_sigma, size=out.shape), 0.0, 1.0)
    return out


def balanced_batches(y: np.ndarray, indices: np.ndarray, plan: BatchPlan,
                     rng: np.random.Generator) -> list[np.ndarray]:
    """P distinct classes x K samples per batch, cycling classes and samples so
    every sample is visited about once per epoch. Deterministic per rng state."""
    y = np.asarray(y, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    classes = np.unique(y[indices])
    if classes.size < plan.p_classes:
        raise InvalidConfiguration(
            f"only {classes.size} classes available, plan wants P={plan.p_classes}"
        )

    queues = {}
    for c in classes:
        members = indices[y[indices] == c]
        if members.size < plan.k_samples and not plan.with_replacement:
            raise InsufficientClassSamples(
                f"class {c} has {members.size} samples, K={plan.k_samples} without replacement"
            )
        queues[c] = list(rng.permutation(members))

    # Class schedule: repeated shuffled permutations chunked into groups of P,
    # with in-chunk duplicates (at permutation seams) swapped out using later
    # schedule entries. Keeps per-class visit counts balanced over the epoch.
    n_batches = max(1, indices.size // plan.batch_size)
    schedule: list = []
    while len(schedule) < n_batches * plan.p_classes + classes.size:
        schedule.extend(rng.permutation(classes))

    batches = []
    pos = 0
    for _ in range(n_batches):
        chunk = schedule[pos : pos + plan.p_classes]
        for i in range(len(chunk)):
            if chunk[i] in chunk[:i]:
                for j in range(pos + plan.p_classes, len(schedule)):
                    if schedule[j] not in chunk:
                        chunk[i], schedule[j] = schedule[j], chunk[i]
                        break
        pos += plan.p_classes
        batch = []
        for c in chunk:
            for _ in range(plan.k_samples):
                if not queues[c]:
                    members = indices[y[indices] == c]
                    queues[c] = list(rng.permutation(members))
                batch.append(queues[c].pop())
        batches.append(np.array(batch, dtype=np.int64))
    return batches
