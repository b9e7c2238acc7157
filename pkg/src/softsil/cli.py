"""Command-line surface: train, eval, gradcheck, synth, report, plot.

Exit codes: 0 success, 1 invalid config, 2 numerical failure, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import gradcheck as gradcheck_mod
from . import reporting
from .data import SyntheticSpec, gen_gaussian_mixture
from .errors import (
    CheckpointFormatError,
    InsufficientClassSamples,
    InvalidConfiguration,
    InvalidLabel,
    InvalidParameter,
    MalformedRecord,
    NoData,
    NumericalFailure,
    SchemaMismatch,
    TruncatedPayload,
)
from .model import MlpModel, ModelConfig, load_checkpoint
from .trainer import Trainer, train

_CONFIG_ERRORS = (InvalidConfiguration, InvalidParameter, CheckpointFormatError, SchemaMismatch)
_DATA_ERRORS = (
    NoData,
    MalformedRecord,
    InvalidLabel,
    TruncatedPayload,
    InsufficientClassSamples,
    FileNotFoundError,
)


def _cmd_train(args) -> int:
    overrides = {
        "seed": args.seed,
        "objective": args.objective,
        "lambda_sil": args.lambda_sil,
        "lambda_ce": args.lambda_ce,
        "epochs": args.epochs,
        "out_dir": args.out,
    }
    run_config, dataset = config_mod.load_run(args.config, overrides)
    summary = train(run_config, dataset, resume_from=args.resume)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _model_config_from_params(params) -> ModelConfig:
    widths = []
    k = 0
    while f"enc{k}_W" in params:
        widths.append(params[f"enc{k}_W"].shape[1])
        k += 1
    if not widths:
        raise CheckpointFormatError("checkpoint holds no encoder layers")
    head_hidden = params["head0_W"].shape[1] if "head0_W" in params else 0
    embed_dim = params["head1_W"].shape[1] if "head1_W" in params else widths[-1]
    return ModelConfig(
        input_dim=params["enc0_W"].shape[0],
        encoder_widths=tuple(widths),
        head_hidden=head_hidden,
        embed_dim=embed_dim,
        dropout_rate=0.0,
    )


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if "cls_W" in ckpt.params:
        tag = "ce"
    elif "proxies" in ckpt.params:
        tag = "proxy_nca"
    else:
        tag = "supcon"
    run_config, dataset = config_mod.load_run(args.data, {"objective": tag})
    run_config.model = _model_config_from_params(ckpt.params)
    trainer = Trainer(run_config, dataset)
    for name, arr in ckpt.params.items():
        if name not in trainer.params or trainer.params[name].shape != arr.shape:
            raise InvalidConfiguration(
                f"checkpoint parameter {name!r} does not fit the data source (shape {arr.shape})"
            )
        trainer.params[name][...] = arr
    trainer.model.bump_version()
    out = {
        "checkpoint": args.checkpoint,
        "epoch": ckpt.epoch,
        "val": trainer.evaluate("val"),
        "test": trainer.evaluate("test"),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    ok, _ = gradcheck_mod.run(scope=args.scope, instances=args.instances, seed=args.seed)
    return 0 if ok else 2


def _cmd_synth(args) -> int:
    cfg = dict(config_mod._DEFAULTS)
    if args.spec:
        cfg.update(config_mod.parse_config_file(args.spec))
    spec = SyntheticSpec(
        num_classes=int(cfg["classes"]),
        dim=int(cfg["dim"]),
        per_class=int(cfg["per_class"]),
        spread=float(cfg["spread"]),
        noise=float(cfg["noise"]),
        seed=int(cfg["data_seed"]),
    )
    dataset = gen_gaussian_mixture(spec)
    os.makedirs(args.out, exist_ok=True)
    for split in ("train", "val", "test"):
        x, y = dataset.split(split)
        rows = np.hstack([y[:, None].astype(np.float64), x])
        np.savetxt(os.path.join(args.out, f"{split}.csv"), rows, delimiter=",", fmt="%.17g")
    with open(os.path.join(args.out, "meta.json"), "w") as fh:
        json.dump(
            {"classes": spec.num_classes, "dim": spec.dim, "per_class": spec.per_class,
             "spread": spec.spread, "noise": spec.noise, "seed": spec.seed},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {args.out}/train.csv, val.csv, test.csv")
    return 0


def _cmd_report(args) -> int:
    agg = reporting.aggregate(args.run_dirs)
    csv_text = reporting.report_csv(agg)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
    print(reporting.report_table(agg))
    return 0


def _cmd_plot(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"curves_{args.name}.svg")
    reporting.write_curves(args.csvs, out_path)
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softsil", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--objective", choices=list(config_mod.OBJECTIVE_TAGS))
    p.add_argument("--lambda-sil", dest="lambda_sil", type=float)
    p.add_argument("--lambda-ce", dest="lambda_ce", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data source")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="config file describing the dataset")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--scope", choices=sorted(gradcheck_mod.SCOPES), default="all")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic dataset to CSV")
    p.add_argument("--spec", help="config file with synthetic keys")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("report", help="aggregate run summaries into a table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="also write the aggregate CSV here")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("plot", help="render metrics CSVs as an SVG curve plot")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="run")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
