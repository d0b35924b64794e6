"""Robust training strategies.

Density-convexity-gated mixup: once per epoch the bottleneck geometry is
recomputed, classes with convexity below T and density above D become
eligible, and a fraction of each batch is replaced by virtual samples
mixing an eligible-class sample with a near-centroid donor from another
eligible class. Fast adversarial training: one-step loss-ascent
perturbations with a random start inside the epsilon ball, both
modalities perturbed every batch.

Both strategies ride on models.train through its batch hooks and draw
their extra randomness from separate seeded streams, so disabling them
(mixup_fraction 0, or epsilon 0 with the random init off) reproduces
plain training bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import models
from .attacks import PerturbationBudget, uniform_in_ball
from .errors import DomainError, GateError, SameClassError
from .geometry import ClassGeometry, compute_class_geometry, inner_quantile_indices
from .models import Dataset, FusionModel, TrainConfig
from .numerics import NormKind, lp_norm, lp_project

logger = logging.getLogger(__name__)


@dataclass
class MixupConfig:
    convexity_threshold: float = 0.5
    density_threshold: float = 8.0
    tau: float = 0.8
    alpha_law: str = "uniform"
    mixup_fraction: float = 0.5
    seed: int = 0
    norm: NormKind = NormKind.L2
    n_convexity: int = 2000

    def __post_init__(self) -> None:
        if not (0.0 <= self.convexity_threshold <= 1.0):
            raise DomainError("convexity threshold must lie in [0, 1]")
        if not self.density_threshold > 0:
            raise DomainError("density threshold must be > 0")
        if not (0.0 <= self.mixup_fraction <= 1.0):
            raise DomainError("mixup_fraction must lie in [0, 1]")
        if not (0.0 < self.tau < 1.0):
            raise DomainError("tau must lie in (0, 1)")
        if self.alpha_law != "uniform":
            raise DomainError(f"unsupported alpha law {self.alpha_law!r}")


def compute_gates(
    geometries: list[ClassGeometry], config: MixupConfig
) -> tuple[set[int], set[int]]:
    """Classes passing kappa < T and rho > D.

    Returns (eligible, donors). Both gates apply to both classes of a
    pair, so the donor set equals the eligible set; partner samples are
    additionally restricted to each donor class's inner tau quantile
    (see donor_pools). NaN density never passes.
    """
    eligible = {
        g.class_id
        for g in geometries
        if g.kappa < config.convexity_threshold and g.rho > config.density_threshold
    }
    return eligible, set(eligible)


def donor_pools(
    embeddings: np.ndarray,
    labels: np.ndarray,
    geometries: list[ClassGeometry],
    eligible: set[int],
    multi_label: bool = False,
) -> dict[int, np.ndarray]:
    """Dataset indices of near-centroid samples per eligible class."""
    from .geometry import class_membership

    members = class_membership(labels, multi_label)
    pools: dict[int, np.ndarray] = {}
    for g in geometries:
        if g.class_id in eligible:
            pool = inner_quantile_indices(embeddings, members[g.class_id], g)
            if pool.size:
                pools[g.class_id] = pool
    return pools


def mixup_batch(
    samples_i: tuple[np.ndarray, np.ndarray, np.ndarray],
    samples_j: tuple[np.ndarray, np.ndarray, np.ndarray],
    alphas: np.ndarray,
    eligible: set[int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convex combinations of paired samples with one shared alpha per pair.

    samples_i and samples_j are (X_audio, X_video, Y) row batches. Every
    pair must come from two different gated classes (class of a row =
    argmax of its label vector).
    """
    (xa_i, xv_i, y_i), (xa_j, xv_j, y_j) = samples_i, samples_j
    alphas = np.asarray(alphas, dtype=np.float64)
    cls_i = np.argmax(y_i, axis=1)
    cls_j = np.argmax(y_j, axis=1)
    for k, (ci, cj) in enumerate(zip(cls_i, cls_j)):
        if ci == cj:
            raise SameClassError(f"pair {k}: both samples from class {ci}")
        if ci not in eligible or cj not in eligible:
            raise GateError(f"pair {k}: classes ({ci}, {cj}) not both gated")
    a = alphas[:, None]
    return (
        a * xa_i + (1.0 - a) * xa_j,
        a * xv_i + (1.0 - a) * xv_j,
        a * y_i + (1.0 - a) * y_j,
    )


def train_mixup(
    model: FusionModel,
    dataset: Dataset,
    train_config: TrainConfig,
    mixup_config: MixupConfig,
) -> tuple[FusionModel, list[float]]:
    """Training with per-epoch gate refresh and gated virtual samples.

    Epochs without at least two eligible classes (or without donors) fall
    back to plain batches; that event is logged once per epoch.
    """
    xa_all, xv_all, y_all = dataset.as_arrays()
    primary_all = np.argmax(y_all, axis=1)
    rng = np.random.default_rng([mixup_config.seed, 0xA1])
    state: dict = {"eligible": set(), "pools": {}, "donor_classes": []}

    def refresh(current: FusionModel, epoch: int) -> None:
        emb, labels = models.extract_bottleneck(current, dataset)
        geoms = compute_class_geometry(
            emb,
            labels,
            lambda pts: models.head_logits(current, pts),
            norm=mixup_config.norm,
            tau=mixup_config.tau,
            n_convexity=mixup_config.n_convexity,
            seed=mixup_config.seed,
            multi_label=dataset.multi_label,
        )
        eligible, _ = compute_gates(geoms, mixup_config)
        pools = donor_pools(emb, labels, geoms, eligible, dataset.multi_label)
        usable = sorted(c for c in eligible if c in pools)
        state["eligible"] = eligible
        state["pools"] = pools
        state["donor_classes"] = usable
        if len(usable) < 2:
            logger.info("epoch %d: fewer than two gated classes, plain batches", epoch)

    def transform(epoch: int, xa: np.ndarray, xv: np.ndarray, y: np.ndarray):
        donors = state["donor_classes"]
        budget = int(np.floor(mixup_config.mixup_fraction * xa.shape[0]))
        if budget == 0 or len(donors) < 2:
            return xa, xv, y
        cls = np.argmax(y, axis=1)
        candidates = [k for k in range(xa.shape[0]) if cls[k] in state["eligible"]]
        # keep only rows that have a partner class available
        candidates = [
            k for k in candidates if any(c != cls[k] for c in donors)
        ]
        if not candidates:
            return xa, xv, y
        take = min(budget, len(candidates))
        chosen = rng.choice(len(candidates), size=take, replace=False)
        rows, partner_rows, alphas = [], [], []
        for pos in chosen:
            k = candidates[pos]
            partners = [c for c in donors if c != cls[k]]
            partner_class = partners[rng.integers(0, len(partners))]
            # pairing is keyed on each sample's primary (argmax) class, so
            # multi-label donors whose primary class differs are excluded
            pool = state["pools"][partner_class]
            pool = pool[primary_all[pool] == partner_class]
            if pool.size == 0:
                continue
            rows.append(k)
            partner_rows.append(int(pool[rng.integers(0, pool.size)]))
            alphas.append(rng.random())
        if not rows:
            return xa, xv, y
        mixed_xa, mixed_xv, mixed_y = mixup_batch(
            (xa[rows], xv[rows], y[rows]),
            (xa_all[partner_rows], xv_all[partner_rows], y_all[partner_rows]),
            np.asarray(alphas),
            state["eligible"],
        )
        xa, xv, y = xa.copy(), xv.copy(), y.copy()
        xa[rows], xv[rows], y[rows] = mixed_xa, mixed_xv, mixed_y
        return xa, xv, y

    return models.train(
        model, dataset, train_config, batch_transform=transform, epoch_callback=refresh
    )


def adversarial_train(
    model: FusionModel,
    dataset: Dataset,
    train_config: TrainConfig,
    budget: PerturbationBudget,
    *,
    random_init: bool = True,
) -> tuple[FusionModel, list[float]]:
    """Fast adversarial training: random start plus one ascent step.

    Each batch is perturbed in both modalities with a single normalized
    loss-ascent step of size 1.25 * epsilon from a uniform random point
    inside the epsilon ball, then projected back. With random_init off
    and epsilon 0 this is exactly plain training.
    """
    rng = np.random.default_rng([train_config.seed, 0xAD])
    alpha = 1.25 * budget.epsilon

    def transform(epoch: int, xa: np.ndarray, xv: np.ndarray, y: np.ndarray):
        n = xa.shape[0]
        if random_init:
            da = np.stack([uniform_in_ball(rng, xa.shape[1], budget.norm, budget.epsilon) for _ in range(n)])
            dv = np.stack([uniform_in_ball(rng, xv.shape[1], budget.norm, budget.epsilon) for _ in range(n)])
        else:
            da = np.zeros_like(xa)
            dv = np.zeros_like(xv)
        if budget.epsilon == 0.0:
            return xa, xv, y
        _, _, gxa, gxv = models._grads_batch(model_ref["m"], xa + da, xv + dv, y)
        for k in range(n):
            da[k] = _single_step(da[k], gxa[k], budget, alpha)
            dv[k] = _single_step(dv[k], gxv[k], budget, alpha)
        return xa + da, xv + dv, y

    # the hook must see the evolving parameters; models.train works on a
    # private copy, so capture it through the epoch callback
    model_ref: dict = {"m": model}

    def track(current: FusionModel, epoch: int) -> None:
        model_ref["m"] = current

    return models.train(
        model, dataset, train_config, batch_transform=transform, epoch_callback=track
    )


def _single_step(
    delta: np.ndarray, grad: np.ndarray, budget: PerturbationBudget, alpha: float
) -> np.ndarray:
    gnorm = lp_norm(grad, budget.norm)
    if gnorm == 0.0:
        return lp_project(delta, budget.norm, budget.epsilon)
    if budget.norm is NormKind.LINF:
        step = alpha * np.sign(grad)
    else:
        step = alpha * grad / gnorm
    return lp_project(delta + step, budget.norm, budget.epsilon)
