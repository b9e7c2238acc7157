"""Flat key = value config files and their translation into run objects.

Unknown keys are rejected; CLI flags override file values."""

from __future__ import annotations

import os

from .data import (
    AugmentationSpec,
    BatchPlan,
    Dataset,
    SyntheticSpec,
    gen_gaussian_mixture,
    load_cifar10_binary,
    load_csv_dataset,
)
from .errors import InvalidConfiguration
from .model import ModelConfig
from .objectives import OBJECTIVE_TAGS, ObjectiveSpec
from .sil_loss import SilhouetteParams
from .supcon import SupConParams
from .trainer import RunConfig

_DEFAULTS = {
    "dataset": "synthetic",
    "classes": "8",
    "dim": "32",
    "per_class": "400",
    "spread": "1.0",
    "noise": "0.5",
    "data_seed": "0",
    "data_dir": "",
    "csv_path": "",
    "limit_train": "",
    "limit_test": "",
    "val_fraction": "0.1",
    "objective": "ce",
    "lambda_sil": "1.0",
    "lambda_ce": "1.0",
    "center_weight": "0.003",
    "center_lr": "0.5",
    "tau": "0.1",
    "tau_s": "0.1",
    "tau_m": "0.05",
    "epsilon": "1e-8",
    "sil_on_both_views": "true",
    "encoder_widths": "512,256",
    "head_hidden": "128",
    "embed_dim": "64",
    "dropout": "0.2",
    "p_classes": "8",
    "k_samples": "8",
    "epochs": "30",
    "lr": "0.001",
    "weight_decay": "0.0001",
    "seed": "0",
    "out_dir": "runs/run0",
    "aug_flip": "0.0",
    "aug_crop_pad": "0",
    "aug_noise": "0.0",
}


def parse_config_file(path) -> dict:
    """`key = value` lines, `#` comments, blank lines ignored."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfiguration(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _DEFAULTS:
                raise InvalidConfiguration(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def _bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise InvalidConfiguration(f"expected a boolean, got {s!r}")


def build_dataset(cfg: dict) -> Dataset:
    kind = cfg["dataset"]
    if kind == "synthetic":
        return gen_gaussian_mixture(
            SyntheticSpec(
                num_classes=int(cfg["classes"]),
                dim=int(cfg["dim"]),
                per_class=int(cfg["per_class"]),
                spread=float(cfg["spread"]),
                noise=float(cfg["noise"]),
                seed=int(cfg["data_seed"]),
            )
        )
    if kind == "cifar10":
        if not cfg["data_dir"]:
            raise InvalidConfiguration("cifar10 dataset needs data_dir")
        return load_cifar10_binary(
            cfg["data_dir"],
            limit_train=int(cfg["limit_train"]) if cfg["limit_train"] else None,
            limit_test=int(cfg["limit_test"]) if cfg["limit_test"] else None,
            val_fraction=float(cfg["val_fraction"]),
            seed=int(cfg["data_seed"]),
        )
    if kind == "csv":
        if not cfg["csv_path"]:
            raise InvalidConfiguration("csv dataset needs csv_path")
        return load_csv_dataset(cfg["csv_path"], seed=int(cfg["data_seed"]))
    raise InvalidConfiguration(f"unknown dataset kind {cfg['dataset']!r}")


def build_run_config(cfg: dict, input_dim: int) -> RunConfig:
    tag = cfg["objective"]
    if tag not in OBJECTIVE_TAGS:
        raise InvalidConfiguration(f"unknown objective {tag!r}")
    try:
        objective = ObjectiveSpec(
            tag=tag,
            lambda_sil=float(cfg["lambda_sil"]),
            lambda_ce=float(cfg["lambda_ce"]),
            center_weight=float(cfg["center_weight"]),
            center_lr=float(cfg["center_lr"]),
            sil=SilhouetteParams(
                tau_s=float(cfg["tau_s"]),
                tau_m=float(cfg["tau_m"]),
                epsilon=float(cfg["epsilon"]),
            ),
            supcon=SupConParams(tau=float(cfg["tau"])),
            sil_on_both_views=_bool(cfg["sil_on_both_views"]),
        )
        model = ModelConfig(
            input_dim=input_dim,
            encoder_widths=tuple(int(w) for w in cfg["encoder_widths"].split(",") if w.strip()),
            head_hidden=int(cfg["head_hidden"]),
            embed_dim=int(cfg["embed_dim"]),
            dropout_rate=float(cfg["dropout"]),
        )
        plan = BatchPlan(p_classes=int(cfg["p_classes"]), k_samples=int(cfg["k_samples"]))
        augmentation = AugmentationSpec(
            flip_prob=float(cfg["aug_flip"]),
            crop_pad=int(cfg["aug_crop_pad"]),
            noise_sigma=float(cfg["aug_noise"]),
        )
        return RunConfig(
            objective=objective,
            model=model,
            plan=plan,
            augmentation=augmentation,
            epochs=int(cfg["epochs"]),
            lr=float(cfg["lr"]),
            weight_decay=float(cfg["weight_decay"]),
            seed=int(cfg["seed"]),
            out_dir=cfg["out_dir"],
            dataset_name=cfg["dataset"],
        )
    except (ValueError, TypeError) as exc:
        raise InvalidConfiguration(str(exc)) from exc


def load_run(path=None, overrides=None):
    """Merge defaults, the config file, and CLI overrides; return
    (RunConfig, Dataset)."""
    cfg = dict(_DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise InvalidConfiguration(f"config file {path!r} does not exist")
        cfg.update(parse_config_file(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _DEFAULTS:
            raise InvalidConfiguration(f"unknown override {key!r}")
        cfg[key] = str(value)
    dataset = build_dataset(cfg)
    return build_run_config(cfg, dataset.x.shape[1]), dataset
