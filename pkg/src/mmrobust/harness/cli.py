"""Command-line interface.

Subcommands: gen, train, mixup-train, at-train, attack, metrics,
theorem1, report. Every command takes --config plus targeted overrides;
all randomness hangs off the config's single seed (or --seed). Exit code
0 on success; library failures print the categorized error name and exit
nonzero.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import models, theory
from ..attacks import Mask, attack_dataset, evaluate_under_attack
from ..errors import MMRobustError
from ..models import load_model, save_model
from ..numerics import NormKind
from .config import apply_overrides, load_config
from .dataio import load_dataset, load_dataset_csv, save_dataset, save_dataset_csv
from .experiment import (
    budget_from_config,
    dataset_from_config,
    derive_seed,
    model_from_config,
    run_experiment,
    train_by_strategy,
    train_test_split,
    write_json_report,
    _STREAM_SPLIT,
)
from .metrics import eval_metrics
from .geometry_report import geometry_table


def _add_common(parser: argparse.ArgumentParser, need_config: bool = True) -> None:
    parser.add_argument("--config", required=need_config, help="path to a key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def _add_budget_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epsilon", type=float, default=None)
    parser.add_argument("--norm", choices=("l1", "l2", "linf"), default=None)
    parser.add_argument("--iterations", type=int, default=None)
    parser.add_argument("--mask", choices=("audio", "video", "both"), default=None)


def _config_from_args(args) -> "ExperimentConfig":
    config = load_config(args.config)
    overrides = {"seed": args.seed}
    for key in ("epsilon", "norm", "iterations", "mask"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    return apply_overrides(config, **overrides)


def _load_data(args, config):
    if getattr(args, "data", None):
        path = Path(args.data)
        if path.suffix.lower() == ".csv":
            return load_dataset_csv(path, multi_label=config.multi_label)
        return load_dataset(path)
    return None


def cmd_gen(args) -> int:
    config = _config_from_args(args)
    dataset = dataset_from_config(config)
    if args.out:
        if Path(args.out).suffix.lower() == ".csv":
            save_dataset_csv(dataset, args.out)
        else:
            save_dataset(dataset, args.out)
        print(f"wrote {len(dataset)} samples to {args.out}")
    if args.train_out or args.test_out:
        train_set, test_set = train_test_split(
            dataset, config.train_fraction, seed=derive_seed(config.seed, _STREAM_SPLIT)
        )
        if args.train_out:
            save_dataset(train_set, args.train_out)
            print(f"wrote {len(train_set)} train samples to {args.train_out}")
        if args.test_out:
            save_dataset(test_set, args.test_out)
            print(f"wrote {len(test_set)} test samples to {args.test_out}")
    return 0


def _train_common(args, strategy: str) -> int:
    config = _config_from_args(args)
    config.strategy = strategy
    data = _load_data(args, config)
    if data is None:
        full = dataset_from_config(config)
        data, _ = train_test_split(
            full, config.train_fraction, seed=derive_seed(config.seed, _STREAM_SPLIT)
        )
    model = model_from_config(config, data)
    trained, history = train_by_strategy(config, model, data)
    save_model(trained, args.out)
    final = history[-1] if history else float("nan")
    print(f"trained {strategy} model on {len(data)} samples, "
          f"final loss {final:.6f}, train accuracy "
          f"{models.train_accuracy(trained, data):.4f}; saved to {args.out}")
    return 0


def cmd_train(args) -> int:
    return _train_common(args, "plain")


def cmd_mixup_train(args) -> int:
    return _train_common(args, "mixup")


def cmd_at_train(args) -> int:
    return _train_common(args, "at")


def cmd_attack(args) -> int:
    config = _config_from_args(args)
    model = load_model(args.model)
    data = _load_data(args, config)
    if data is None:
        full = dataset_from_config(config)
        _, data = train_test_split(
            full, config.train_fraction, seed=derive_seed(config.seed, _STREAM_SPLIT)
        )
    budget = budget_from_config(config)
    report = evaluate_under_attack(model, data, budget)
    payload = {
        "budget": {
            "epsilon": budget.epsilon,
            "norm": budget.norm.value,
            "iterations": budget.iterations,
            "step_size": budget.alpha,
            "mask": budget.mask.value,
        },
        "n_samples": len(data),
        "clean": report.clean.as_dict(),
        "attacked": report.attacked.as_dict(),
        "per_class_clean": report.per_class_clean,
        "per_class_attacked": report.per_class_attacked,
        "per_class_drop": report.per_class_drop,
    }
    if args.out:
        write_json_report(args.out, payload)
        print(f"attack report written to {args.out}")
    else:
        write_json_report("/dev/stdout", payload)
    if args.out_dataset:
        perturbed, _ = attack_dataset(model, data, budget)
        save_dataset(perturbed, args.out_dataset)
        print(f"perturbed dataset written to {args.out_dataset}")
    return 0


def cmd_metrics(args) -> int:
    config = _config_from_args(args)
    model = load_model(args.model)
    data = _load_data(args, config)
    if data is None:
        data = dataset_from_config(config)
    xa, xv, y = data.as_arrays()
    logits, _, _ = models._forward_batch(model, xa, xv)
    scores = models.predict_proba(model, logits)
    bundle = eval_metrics(scores, y, data.multi_label)
    payload = {
        "n_samples": len(data),
        "metrics": bundle.as_dict(),
        "per_class_geometry": geometry_table(model, data, config),
    }
    if args.out:
        write_json_report(args.out, payload)
        print(f"metrics written to {args.out}")
    else:
        write_json_report("/dev/stdout", payload)
    return 0


def cmd_theorem1(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)

    def unit(dim: int) -> np.ndarray:
        v = rng.standard_normal(dim)
        return v / np.linalg.norm(v)

    def run_one(s: float, t: float) -> dict:
        spec = theory.CounterexampleSpec(
            a=unit(args.dim_audio), b=unit(args.dim_video), s=s, t=t, tol=args.tol
        )
        model, sample = theory.construct_counterexample(spec, args.modality)
        report = theory.find_unimodal_break(model, sample, spec, args.modality)
        verified = theory.verify_theorem1(report, spec)
        return {"s": s, "t": t, "verified": verified, "report": report.as_dict()}

    if args.count:
        results = []
        for _ in range(args.count):
            s = float(rng.uniform(0.2, 3.0))
            t = float(rng.uniform(0.2, 3.0))
            results.append(run_one(s, t))
        payload = {
            "count": args.count,
            "all_verified": all(r["verified"] for r in results),
            "cases": results,
        }
    else:
        if args.s is None or args.t is None:
            raise MMRobustError("theorem1 needs either --count or both --s and --t")
        payload = run_one(args.s, args.t)
        payload["all_verified"] = payload["verified"]

    if args.out:
        write_json_report(args.out, payload)
        print(f"theorem report written to {args.out}")
    else:
        write_json_report("/dev/stdout", payload)
    if not payload["all_verified"]:
        print("TheoremVerificationFailed: see report", file=sys.stderr)
        return 4
    return 0


def cmd_report(args) -> int:
    config = _config_from_args(args)
    summary = run_experiment(config, args.out_dir)
    clean_acc = summary["clean"]["accuracy"]
    both = summary["attacks"]["both"]["attacked"]["accuracy"]
    print(f"experiment complete: clean accuracy {clean_acc:.4f}, "
          f"joint-attack accuracy {both:.4f}; reports in {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmrobust",
        description="Adversarial robustness workbench for two-tower fusion classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", default=None, help="full dataset file (.mmr or .csv)")
    p.add_argument("--train-out", default=None, help="write the train split here")
    p.add_argument("--test-out", default=None, help="write the test split here")
    p.set_defaults(func=cmd_gen)

    for name, func in (("train", cmd_train), ("mixup-train", cmd_mixup_train),
                       ("at-train", cmd_at_train)):
        p = sub.add_parser(name, help=f"{name} a fusion model")
        _add_common(p)
        p.add_argument("--data", default=None, help="dataset file; omitted = config train split")
        p.add_argument("--out", required=True, help="checkpoint path")
        if name == "at-train":
            _add_budget_overrides(p)
        p.set_defaults(func=func)

    p = sub.add_parser("attack", help="attack a trained model and report metrics")
    _add_common(p)
    _add_budget_overrides(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="dataset file; omitted = config test split")
    p.add_argument("--out", default=None, help="JSON report path (default stdout)")
    p.add_argument("--out-dataset", default=None, help="write the perturbed dataset for replay")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("metrics", help="clean metrics plus class geometry")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("theorem1", help="construct and verify unimodal-break counterexamples")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--s", type=float, default=None, help="attacked modality score magnitude")
    p.add_argument("--t", type=float, default=None, help="other modality score")
    p.add_argument("--count", type=int, default=None, help="run this many random specs")
    p.add_argument("--dim-audio", type=int, default=3)
    p.add_argument("--dim-video", type=int, default=3)
    p.add_argument("--modality", choices=("audio", "video"), default="audio")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_theorem1)

    p = sub.add_parser("report", help="run the full experiment pipeline")
    _add_common(p)
    _add_budget_overrides(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MMRobustError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
