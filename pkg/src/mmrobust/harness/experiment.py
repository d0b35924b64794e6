"""End-to-end pipeline: data, training, attacks, geometry, reports.

Outputs per run: a structured JSON summary, the per-class CSV behind the
drop-rate-versus-convexity scatter (columns class_id, n_c, kappa,
rho_tau60, rho_tau80, clean_acc, attacked_acc, drop_rate), and an
optional bottleneck embedding dump. Reports contain no timestamps or
environment strings, so identical seeds give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .. import models, strategies
from ..attacks import Mask, PerturbationBudget, evaluate_under_attack
from ..errors import ConfigError
from ..geometry import compute_class_geometry
from ..models import Dataset, FusionModel, TrainConfig, build_fusion_model
from ..numerics import NormKind
from .config import ExperimentConfig
from .dataio import load_dataset, load_dataset_csv, save_embeddings_csv
from .metrics import eval_metrics
from .synthetic import SyntheticConfig, generate_synthetic, train_test_split

PER_CLASS_COLUMNS = (
    "class_id", "n_c", "kappa", "rho_tau60", "rho_tau80",
    "clean_acc", "attacked_acc", "drop_rate",
)

# fixed sub-stream tags hanging off the top-level seed
_STREAM_MODEL = 2
_STREAM_TRAIN = 3
_STREAM_SPLIT = 4
_STREAM_GEOMETRY = 5
_STREAM_MIXUP = 6


def derive_seed(seed: int, stream: int) -> int:
    """Stable 64-bit child seed for one pipeline stage."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return int(ss.generate_state(1, np.uint64)[0])


def dataset_from_config(config: ExperimentConfig) -> Dataset:
    if config.dataset:
        path = Path(config.dataset)
        if not path.exists():
            raise ConfigError(f"dataset: file {config.dataset!r} does not exist")
        if path.suffix.lower() == ".csv":
            return load_dataset_csv(path, multi_label=config.multi_label)
        return load_dataset(path)
    return generate_synthetic(synthetic_config(config))


def synthetic_config(config: ExperimentConfig) -> SyntheticConfig:
    return SyntheticConfig(
        n_classes=config.n_classes,
        samples_per_class=config.samples_per_class,
        d_audio=config.d_audio,
        d_video=config.d_video,
        cluster_spread=config.cluster_spread,
        cross_modal_correlation=config.cross_modal_correlation,
        shapes=config.shapes,
        seed=config.seed,
        multi_label=config.multi_label,
        class_separation=config.class_separation,
        shape_radius=config.shape_radius,
        ambient_noise=config.ambient_noise,
        center_radius=config.center_radius if config.center_radius else None,
    )


def model_from_config(config: ExperimentConfig, dataset: Dataset) -> FusionModel:
    return build_fusion_model(
        dataset.d_audio,
        dataset.d_video,
        dataset.n_classes,
        bottleneck_audio=config.bottleneck_audio,
        bottleneck_video=config.bottleneck_video,
        hidden_audio=config.hidden_audio,
        hidden_video=config.hidden_video,
        hidden_head=config.hidden_head,
        activation=config.activation,
        loss_kind="sigmoid_bce" if dataset.multi_label else "softmax_ce",
        seed=derive_seed(config.seed, _STREAM_MODEL),
    )


def train_config_from(config: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        optimizer=config.optimizer,
        seed=derive_seed(config.seed, _STREAM_TRAIN),
        momentum=config.momentum,
    )


def budget_from_config(config: ExperimentConfig, mask: Mask | None = None) -> PerturbationBudget:
    return PerturbationBudget(
        epsilon=config.epsilon,
        norm=NormKind.parse(config.norm),
        iterations=config.iterations,
        step_size=config.step_size,
        mask=Mask.parse(config.mask) if mask is None else mask,
    )


def mixup_config_from(config: ExperimentConfig) -> strategies.MixupConfig:
    return strategies.MixupConfig(
        convexity_threshold=config.mixup_convexity_threshold,
        density_threshold=config.mixup_density_threshold,
        tau=config.tau,
        mixup_fraction=config.mixup_fraction,
        seed=derive_seed(config.seed, _STREAM_MIXUP),
        norm=NormKind.parse(config.geometry_norm),
        n_convexity=config.n_convexity,
    )


def train_by_strategy(
    config: ExperimentConfig, model: FusionModel, train_set: Dataset
) -> tuple[FusionModel, list[float]]:
    tc = train_config_from(config)
    if config.strategy == "plain":
        return models.train(model, train_set, tc)
    if config.strategy == "mixup":
        return strategies.train_mixup(model, train_set, tc, mixup_config_from(config))
    return strategies.adversarial_train(
        model, train_set, tc, budget_from_config(config, Mask.BOTH)
    )


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return v
    return value


def write_json_report(path, payload: dict) -> None:
    text = json.dumps(_json_safe(payload), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def _fmt(value: float) -> str:
    v = float(value)
    return "nan" if math.isnan(v) else repr(v)


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Execute the full pipeline and write the report files.

    Returns the summary dict (the same object serialized to
    summary.json). Geometry is computed on the training-split
    embeddings; attack metrics and per-class drops on the test split
    under the configured budget, reported per mask.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dataset = dataset_from_config(config)
    train_set, test_set = train_test_split(
        dataset, config.train_fraction, seed=derive_seed(config.seed, _STREAM_SPLIT)
    )
    model = model_from_config(config, dataset)
    trained, history = train_by_strategy(config, model, train_set)

    xa, xv, y = test_set.as_arrays()
    clean_logits, _, _ = models._forward_batch(trained, xa, xv)
    clean_scores = models.predict_proba(trained, clean_logits)
    clean = eval_metrics(clean_scores, y, dataset.multi_label)

    reports = {
        "audio": evaluate_under_attack(trained, test_set, budget_from_config(config, Mask.AUDIO_ONLY)),
        "video": evaluate_under_attack(trained, test_set, budget_from_config(config, Mask.VIDEO_ONLY)),
        "both": evaluate_under_attack(trained, test_set, budget_from_config(config, Mask.BOTH)),
    }

    emb_train, labels_train = models.extract_bottleneck(trained, train_set)
    geometry_seed = derive_seed(config.seed, _STREAM_GEOMETRY)
    score_fn = lambda pts: models.head_logits(trained, pts)  # noqa: E731
    geom_high = compute_class_geometry(
        emb_train, labels_train, score_fn,
        norm=NormKind.parse(config.geometry_norm), tau=config.tau,
        n_convexity=config.n_convexity, seed=geometry_seed,
        multi_label=dataset.multi_label,
    )
    geom_low = compute_class_geometry(
        emb_train, labels_train, score_fn,
        norm=NormKind.parse(config.geometry_norm), tau=config.tau_low,
        n_convexity=config.n_convexity, seed=geometry_seed,
        multi_label=dataset.multi_label,
    )
    rho_low = {g.class_id: g.rho for g in geom_low}

    both = reports["both"]
    per_class_rows = []
    for g in geom_high:
        c = g.class_id
        per_class_rows.append({
            "class_id": c,
            "n_c": g.n_samples,
            "kappa": g.kappa,
            "rho_tau60": rho_low.get(c, float("nan")),
            "rho_tau80": g.rho,
            "clean_acc": both.per_class_clean.get(c, float("nan")),
            "attacked_acc": both.per_class_attacked.get(c, float("nan")),
            "drop_rate": both.per_class_drop.get(c, float("nan")),
        })

    csv_path = out / "per_class.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PER_CLASS_COLUMNS)
        for row in per_class_rows:
            writer.writerow(
                [row["class_id"], row["n_c"]]
                + [_fmt(row[col]) for col in PER_CLASS_COLUMNS[2:]]
            )

    files = {"per_class_csv": csv_path.name, "summary_json": "summary.json"}
    if config.dump_bottlenecks:
        emb_test, labels_test = models.extract_bottleneck(trained, test_set)
        all_emb = np.concatenate([emb_train, emb_test], axis=0)
        all_labels = np.concatenate([labels_train, labels_test], axis=0)
        splits = ["train"] * emb_train.shape[0] + ["test"] * emb_test.shape[0]
        dump_path = out / "bottlenecks.csv"
        save_embeddings_csv(dump_path, all_emb, all_labels, splits)
        files["bottlenecks_csv"] = dump_path.name

    summary = {
        "config": {k: _config_value(v) for k, v in vars(config).items()},
        "strategy": config.strategy,
        "data": {
            "n_train": len(train_set),
            "n_test": len(test_set),
            "n_classes": dataset.n_classes,
            "multi_label": dataset.multi_label,
        },
        "train": {
            "epochs": config.epochs,
            "final_loss": history[-1] if history else None,
            "loss_history": history,
        },
        "clean": clean.as_dict(),
        "attacks": {
            name: {
                "attacked": rep.attacked.as_dict(),
                "accuracy_drop_rate": _safe_drop(rep.clean.accuracy, rep.attacked.accuracy),
                "per_class_drop": rep.per_class_drop,
            }
            for name, rep in reports.items()
        },
        "per_class": per_class_rows,
        "files": files,
    }
    write_json_report(out / "summary.json", summary)
    return summary


def _safe_drop(clean: float, attacked: float) -> float:
    if clean <= 0 or math.isnan(clean):
        return float("nan")
    return (clean - attacked) / clean


def _config_value(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def run_experiment_file(config_path, out_dir, **overrides) -> dict:
    from .config import apply_overrides, load_config

    config = apply_overrides(load_config(config_path), **overrides)
    return run_experiment(config, out_dir)
