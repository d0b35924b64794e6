"""Per-class geometry rows shared by the metrics subcommand and tests."""
from __future__ import annotations

from .. import models
from ..geometry import compute_class_geometry
from ..models import Dataset, FusionModel
from ..numerics import NormKind
from .config import ExperimentConfig
from .experiment import derive_seed, _STREAM_GEOMETRY


def geometry_table(model: FusionModel, dataset: Dataset, config: ExperimentConfig) -> list[dict]:
    emb, labels = models.extract_bottleneck(model, dataset)
    seed = derive_seed(config.seed, _STREAM_GEOMETRY)
    score_fn = lambda pts: models.head_logits(model, pts)  # noqa: E731
    rows: dict[int, dict] = {}
    for tau, key in ((config.tau_low, "rho_tau60"), (config.tau, "rho_tau80")):
        geoms = compute_class_geometry(
            emb, labels, score_fn,
            norm=NormKind.parse(config.geometry_norm), tau=tau,
            n_convexity=config.n_convexity, seed=seed,
            multi_label=dataset.multi_label,
        )
        for g in geoms:
            row = rows.setdefault(
                g.class_id,
                {"class_id": g.class_id, "n_c": g.n_samples, "kappa": g.kappa,
                 "r_full": g.r_full},
            )
            row[key] = g.rho
            row[f"r_tau{int(round(tau * 100))}"] = g.r_tau
    return [rows[c] for c in sorted(rows)]
