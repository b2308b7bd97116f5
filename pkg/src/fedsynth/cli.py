"""Command-line entry point.

    fedsynth experiment --config cfg.json --seed 3 --out runs/s3
    fedsynth train --centralized --out runs/cent
    fedsynth generate --generator runs/cent/generator_centgp_iid.json --per-class 500 --out runs/art
    fedsynth estimate-privacy --real real.csv --artificial art.csv --out runs/dap
    fedsynth attack --real real.csv --artificial art.csv --out runs/attack
    fedsynth evaluate --train art.csv --test test.csv --out runs/eval
    fedsynth config            # print every default
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .attacks import evaluate_accuracy, train_student
from .config import ConfigError, ExperimentConfig
from .data import DataFormatError, load_dataset_csv, save_dataset_csv
from .experiments import (
    _STUDENT,
    _prepare_out,
    _write_json,
    inversion_attack,
    prepare,
    privacy_bound,
    run_experiment,
    run_learning_experiment,
    run_privacy_experiment,
    train_generator,
)
from .gan import generate, load_generator
from .numerics import make_rng


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg.validate()


def _square_shape(dim: int):
    side = int(round(dim ** 0.5))
    return (side, side) if side * side == dim else None


def cmd_experiment(args, cfg: ExperimentConfig) -> dict:
    pipelines = {"all": ("learning", "privacy"), "learning": ("learning",),
                 "privacy": ("privacy",)}[args.pipeline]
    res = run_experiment(cfg, cfg.out_dir, pipelines)
    summary = {}
    if "learning" in res:
        summary["learning"] = res["learning"].rows
    if "privacy" in res:
        p = res["privacy"]
        summary["privacy"] = {"mu": p.dap.mu, "gamma": p.dap.gamma,
                              "baseline_detection": p.baseline.detection_rate,
                              "baseline_recognition": p.baseline.recognition_rate,
                              "fedgp_detection": p.fedgp.detection_rate,
                              "fedgp_recognition": p.fedgp.recognition_rate}
    return summary


def cmd_train(args, cfg: ExperimentConfig) -> dict:
    wb = prepare(cfg)
    out = _prepare_out(cfg, cfg.out_dir)
    mode = args.mode or cfg.sharding.mode
    kind = "centgp" if args.centralized else "fedgp"
    train_generator(wb, kind, mode, out)
    save_dataset_csv(wb.pooled(mode), out / f"real_train_{mode}.csv", cfg.provenance())
    save_dataset_csv(wb.test, out / "real_test.csv", cfg.provenance())
    return {"generator": str(out / f"generator_{kind}_{mode}.json")}


def cmd_generate(args, cfg: ExperimentConfig) -> dict:
    gen = load_generator(args.generator)
    labels = np.repeat(np.arange(gen.label_dim), args.per_class)
    art = generate(gen, labels, make_rng([cfg.seed, 12, 2]))
    out = _prepare_out(cfg, cfg.out_dir)
    path = out / "artificial.csv"
    save_dataset_csv(art, path, {**cfg.provenance(), "generator": args.generator})
    return {"artificial": str(path), "rows": len(art)}


def _pair(args):
    real = load_dataset_csv(args.real, args.classes)
    art = load_dataset_csv(args.artificial, real.n_classes, "artificial")
    return real, art


def cmd_estimate_privacy(args, cfg: ExperimentConfig) -> dict:
    if args.real is None:
        rep = run_privacy_experiment(cfg, cfg.out_dir, run_attack=False).dap
    else:
        real, art = _pair(args)
        rep = privacy_bound(cfg, real, art, _prepare_out(cfg, cfg.out_dir))
    return {"mu": rep.mu, "gamma": rep.gamma, "trials": rep.trials, "k": rep.k}


def cmd_attack(args, cfg: ExperimentConfig) -> dict:
    if args.real is None:
        p = run_privacy_experiment(cfg, cfg.out_dir)
        base, fed, gap = p.baseline, p.fedgp, p.gap
    else:
        real, art = _pair(args)
        test = load_dataset_csv(args.test, real.n_classes) if args.test else None
        att = inversion_attack(cfg, real, art, test, _prepare_out(cfg, cfg.out_dir),
                               _square_shape(real.dim))
        base, fed, gap = att.baseline, att.fedgp, att.gap
    return {"baseline_detection": base.detection_rate, "baseline_recognition": base.recognition_rate,
            "fedgp_detection": fed.detection_rate, "fedgp_recognition": fed.recognition_rate,
            **gap}


def cmd_evaluate(args, cfg: ExperimentConfig) -> dict:
    if args.train is None:
        rep = run_learning_experiment(cfg, cfg.out_dir)
        return {"learning": rep.rows}
    if args.test is None:
        raise ConfigError("evaluate --train needs --test")
    train = load_dataset_csv(args.train, args.classes)
    test = load_dataset_csv(args.test, train.n_classes)
    model = train_student(train, cfg.learning.student, make_rng([cfg.seed, _STUDENT]))
    acc = evaluate_accuracy(model, test)
    out = _prepare_out(cfg, cfg.out_dir)
    doc = {**cfg.provenance(), "train": args.train, "test": args.test, "accuracy": acc}
    _write_json(out / "evaluation.json", doc)
    return {"accuracy": acc}


def cmd_config(args, cfg: ExperimentConfig) -> dict | None:
    sys.stdout.write(cfg.to_json())
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsynth", description="Federated synthetic data workbench")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", parents=[common], help="run the full pipelines")
    p.add_argument("--pipeline", choices=("all", "learning", "privacy"), default="all")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("train", parents=[common], help="train a federated or centralised GAN")
    p.add_argument("--centralized", action="store_true", help="pool all shards on one client")
    p.add_argument("--mode", choices=("iid", "non_iid"), help="sharding mode (default from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="sample an artificial dataset to CSV")
    p.add_argument("--generator", required=True, help="generator JSON written by 'train'")
    p.add_argument("--per-class", type=int, default=1000)
    p.set_defaults(func=cmd_generate)

    for name, func, help_ in (("estimate-privacy", cmd_estimate_privacy, "DAP bound of a release"),
                              ("attack", cmd_attack, "model inversion against both students")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--real", help="real dataset CSV (omit to run the configured pipeline)")
        p.add_argument("--artificial", help="artificial dataset CSV")
        p.add_argument("--classes", type=int, help="class count (default: from labels)")
        if name == "attack":
            p.add_argument("--test", help="held-out real CSV for student accuracies")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", parents=[common], help="student accuracy on held-out data")
    p.add_argument("--train", help="training CSV (omit to run the learning pipeline)")
    p.add_argument("--test", help="test CSV")
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("config", parents=[common], help="print the resolved configuration")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    if getattr(args, "real", None) is not None and getattr(args, "artificial", None) is None:
        parser.error("--real needs --artificial")
    try:
        cfg = _load_config(args)
        result = args.func(args, cfg)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if result is not None:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
