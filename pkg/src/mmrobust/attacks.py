"""lp-constrained PGD attacks with a modality mask, universal
perturbations over a sample set, and point-wise robustness search.

Attack steps ascend the loss. The step is normalized by the lp norm of
the gradient over all masked coordinates at once (sign of the gradient
for LInf), then each masked modality is projected back onto its own
epsilon ball. Normalizing jointly means the two-modality attack splits
the same per-step movement that a unimodal attack spends on one
modality; epsilon and the iteration count are then the whole story when
comparing them. The iterate with the highest loss seen, including the
zero initialization, is the one returned, which guards against
overshoot at large step sizes.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import models
from .errors import BudgetError, EmptyInputError
from .models import Dataset, FusionModel, MultiModalSample
from .numerics import NormKind, lp_norm, lp_project

FEASIBILITY_SLACK = 1e-12


class Mask(enum.Enum):
    AUDIO_ONLY = "audio"
    VIDEO_ONLY = "video"
    BOTH = "both"

    @classmethod
    def parse(cls, text: str) -> "Mask":
        key = str(text).strip().lower()
        aliases = {
            "audio": cls.AUDIO_ONLY, "audio-only": cls.AUDIO_ONLY, "a": cls.AUDIO_ONLY,
            "video": cls.VIDEO_ONLY, "video-only": cls.VIDEO_ONLY, "v": cls.VIDEO_ONLY,
            "both": cls.BOTH, "a+v": cls.BOTH, "joint": cls.BOTH,
        }
        if key not in aliases:
            raise BudgetError(f"unknown mask {text!r}; expected audio, video or both")
        return aliases[key]

    @property
    def audio(self) -> bool:
        return self is not Mask.VIDEO_ONLY

    @property
    def video(self) -> bool:
        return self is not Mask.AUDIO_ONLY


@dataclass(frozen=True)
class PerturbationBudget:
    """Constraint set of the attack: one epsilon ball per masked modality.

    step_size None means the 2.5 * epsilon / iterations default. The same
    epsilon and iteration count are used for unimodal and joint attacks,
    which is what makes them comparable.
    """

    epsilon: float
    norm: NormKind = NormKind.L2
    iterations: int = 20
    step_size: float | None = None
    mask: Mask = Mask.BOTH

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise BudgetError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise BudgetError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size is not None and not self.step_size > 0:
            raise BudgetError(f"step_size must be > 0, got {self.step_size}")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.iterations


@dataclass
class Perturbation:
    delta_audio: np.ndarray
    delta_video: np.ndarray

    def norms(self, p: NormKind) -> tuple[float, float]:
        return lp_norm(self.delta_audio, p), lp_norm(self.delta_video, p)

    def is_feasible(self, budget: PerturbationBudget) -> bool:
        na, nv = self.norms(budget.norm)
        limit = budget.epsilon + FEASIBILITY_SLACK
        return na <= limit and nv <= limit


def apply_perturbation(sample: MultiModalSample, pert: Perturbation) -> MultiModalSample:
    return MultiModalSample(
        x_audio=sample.x_audio + pert.delta_audio,
        x_video=sample.x_video + pert.delta_video,
        label=sample.label.copy(),
    )


def _masked_step(
    da: np.ndarray,
    dv: np.ndarray,
    ga: np.ndarray,
    gv: np.ndarray,
    budget: PerturbationBudget,
) -> tuple[np.ndarray, np.ndarray]:
    """One normalized loss-ascent step over the masked coordinates.

    The normalizing norm is taken over the concatenated masked gradient,
    so the joint attack splits the same per-step movement between the two
    modalities instead of getting a double-size step; this is what makes
    unimodal and joint attacks share one budget. LInf steps use the sign
    of the gradient. A zero masked gradient skips the whole update.
    Each modality is projected onto its own epsilon ball.
    """
    parts = []
    if budget.mask.audio:
        parts.append(ga)
    if budget.mask.video:
        parts.append(gv)
    gnorm = lp_norm(np.concatenate(parts), budget.norm)
    if gnorm == 0.0:
        return da, dv
    if budget.mask.audio:
        step = budget.alpha * (np.sign(ga) if budget.norm is NormKind.LINF else ga / gnorm)
        da = lp_project(da + step, budget.norm, budget.epsilon)
    if budget.mask.video:
        step = budget.alpha * (np.sign(gv) if budget.norm is NormKind.LINF else gv / gnorm)
        dv = lp_project(dv + step, budget.norm, budget.epsilon)
    return da, dv


def pgd_attack(
    model: FusionModel, sample: MultiModalSample, budget: PerturbationBudget
) -> Perturbation:
    """Projected gradient ascent on the loss over the masked modalities.

    Deltas start at zero. Returns the best-loss iterate seen (the zero
    start counts), which guards against overshoot; fully deterministic.
    """
    da = np.zeros(model.d_audio)
    dv = np.zeros(model.d_video)
    best = Perturbation(da.copy(), dv.copy())
    best_loss = _sample_loss(model, sample, da, dv)
    for _ in range(budget.iterations):
        ga, gv = models.grad_input(
            model,
            MultiModalSample(sample.x_audio + da, sample.x_video + dv, sample.label),
        )
        da, dv = _masked_step(da, dv, ga, gv, budget)
        cur = _sample_loss(model, sample, da, dv)
        if cur > best_loss:
            best_loss = cur
            best = Perturbation(da.copy(), dv.copy())
    return best


def _sample_loss(model, sample, da, dv) -> float:
    logits, _ = models.forward(model, sample.x_audio + da, sample.x_video + dv)
    return models.loss(model, logits, sample.label)


def universal_perturbation(
    model: FusionModel,
    samples: Dataset | Sequence[MultiModalSample],
    budget: PerturbationBudget,
    *,
    batch_size: int | None = None,
    seed: int = 0,
) -> Perturbation:
    """Single perturbation maximizing the mean loss over a sample set.

    Each of budget.iterations passes shuffles the set into batches (seeded,
    so batch order is reproducible) and takes one projected ascent step per
    batch on the batch-mean gradient. The pass whose delta achieves the
    highest full-set mean loss wins.
    """
    sample_list = samples.samples if isinstance(samples, Dataset) else list(samples)
    if len(sample_list) == 0:
        raise EmptyInputError("universal perturbation needs a non-empty sample set")
    xa = np.stack([s.x_audio for s in sample_list])
    xv = np.stack([s.x_video for s in sample_list])
    y = np.stack([s.label for s in sample_list])
    n = xa.shape[0]
    bs = n if batch_size is None else max(1, int(batch_size))
    rng = np.random.default_rng(seed)

    da = np.zeros(model.d_audio)
    dv = np.zeros(model.d_video)
    best = Perturbation(da.copy(), dv.copy())
    best_loss = _mean_loss(model, xa + da, xv + dv, y)
    for _ in range(budget.iterations):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            _, _, gxa, gxv = models._grads_batch(model, xa[idx] + da, xv[idx] + dv, y[idx])
            # _grads_batch returns per-sample grads of the mean loss; their
            # sum over the batch is the batch-mean-loss input gradient
            da, dv = _masked_step(da, dv, gxa.sum(axis=0), gxv.sum(axis=0), budget)
        cur = _mean_loss(model, xa + da, xv + dv, y)
        if cur > best_loss:
            best_loss = cur
            best = Perturbation(da.copy(), dv.copy())
    return best


def _mean_loss(model, xa, xv, y) -> float:
    logits, _, _ = models._forward_batch(model, xa, xv)
    return float(models._loss_batch(logits, y, model.loss_kind).mean())


def _prediction(model: FusionModel, x_audio, x_video):
    logits, _ = models.forward(model, x_audio, x_video)
    return models.predicted_labels(model, logits.reshape(1, -1))[0]


def _labels_equal(a, b) -> bool:
    return bool(np.array_equal(a, b))


def pointwise_robustness(
    model: FusionModel,
    sample: MultiModalSample,
    norm: NormKind,
    mask: Mask,
    eps_max: float,
    tol: float,
    *,
    iterations: int = 20,
    step_size: float | None = None,
) -> float:
    """Empirical maximum allowable perturbation via bisection over epsilon.

    The PGD attack is the oracle at each radius, so the result is an
    empirical upper bound on robustness, not a certificate. Returns 0 when
    the sample is already misclassified clean, and eps_max when even the
    full-range attack fails to flip the prediction.
    """
    if eps_max <= 0:
        raise BudgetError(f"eps_max must be > 0, got {eps_max}")
    if tol <= 0:
        raise BudgetError(f"tol must be > 0, got {tol}")

    clean_pred = _prediction(model, sample.x_audio, sample.x_video)
    if model.loss_kind == "softmax_ce":
        truth = np.argmax(sample.label)
    else:
        truth = (sample.label >= 0.5).astype(np.int64)
    if not _labels_equal(clean_pred, truth):
        return 0.0

    def flips(eps: float) -> bool:
        budget = PerturbationBudget(
            epsilon=eps, norm=norm, iterations=iterations, step_size=step_size, mask=mask
        )
        pert = pgd_attack(model, sample, budget)
        attacked = _prediction(
            model, sample.x_audio + pert.delta_audio, sample.x_video + pert.delta_video
        )
        return not _labels_equal(attacked, clean_pred)

    if not flips(eps_max):
        return eps_max
    lo, hi = 0.0, eps_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if flips(mid):
            hi = mid
        else:
            lo = mid
    return lo


def attack_dataset(
    model: FusionModel, dataset: Dataset, budget: PerturbationBudget
) -> tuple[Dataset, list[Perturbation]]:
    """Per-sample PGD over a dataset; returns the perturbed copy too,
    so attacks can be exported for replay."""
    perts = [pgd_attack(model, s, budget) for s in dataset.samples]
    perturbed = Dataset(
        samples=[apply_perturbation(s, p) for s, p in zip(dataset.samples, perts)],
        d_audio=dataset.d_audio,
        d_video=dataset.d_video,
        n_classes=dataset.n_classes,
        multi_label=dataset.multi_label,
    )
    return perturbed, perts


def evaluate_under_attack(model: FusionModel, dataset: Dataset, budget: PerturbationBudget):
    """Attack every sample, then score clean vs perturbed predictions.

    Returns a harness AttackReport with aggregate bundles and per-class
    drop rates (NaN where a class's clean performance is zero).
    """
    from .harness.metrics import (
        AttackReport,
        drop_rate,
        eval_metrics,
        per_class_performance,
    )

    if len(dataset) == 0:
        raise EmptyInputError("evaluate_under_attack needs a non-empty dataset")
    xa, xv, y = dataset.as_arrays()
    clean_logits, _, _ = models._forward_batch(model, xa, xv)
    perturbed, _ = attack_dataset(model, dataset, budget)
    pxa, pxv, _ = perturbed.as_arrays()
    att_logits, _, _ = models._forward_batch(model, pxa, pxv)

    clean_scores = models.predict_proba(model, clean_logits)
    att_scores = models.predict_proba(model, att_logits)
    clean = eval_metrics(clean_scores, y, dataset.multi_label)
    attacked = eval_metrics(att_scores, y, dataset.multi_label)

    clean_pc = per_class_performance(clean_scores, y, dataset.multi_label)
    att_pc = per_class_performance(att_scores, y, dataset.multi_label)
    drops: dict[int, float] = {}
    for c in clean_pc:
        if math.isnan(clean_pc[c]) or clean_pc[c] <= 0:
            drops[c] = float("nan")
        else:
            drops[c] = drop_rate(clean_pc[c], att_pc[c])
    return AttackReport(
        clean=clean,
        attacked=attacked,
        per_class_drop=drops,
        budget=budget,
        per_class_clean=clean_pc,
        per_class_attacked=att_pc,
    )


def uniform_in_ball(
    rng: np.random.Generator, dim: int, p: NormKind, eps: float
) -> np.ndarray:
    """Uniform draw from the lp ball of radius eps (used by fast-AT inits)."""
    if eps < 0:
        raise BudgetError(f"radius must be >= 0, got {eps}")
    if eps == 0.0 or dim == 0:
        return np.zeros(dim)
    if p is NormKind.LINF:
        return rng.uniform(-eps, eps, size=dim)
    if p is NormKind.L2:
        direction = rng.standard_normal(dim)
        norm = lp_norm(direction, NormKind.L2)
        if norm == 0.0:
            return np.zeros(dim)
        radius = eps * rng.random() ** (1.0 / dim)
        return direction * (radius / norm)
    # L1: uniform point on the simplex (exponential spacings), random signs,
    # then a radial factor for uniformity in the cross-polytope volume
    raw = -np.log(rng.random(dim))
    simplex = raw / raw.sum()
    signs = np.where(rng.random(dim) < 0.5, -1.0, 1.0)
    radius = eps * rng.random() ** (1.0 / dim)
    return simplex * signs * radius


def random_perturbation_like(
    rng: np.random.Generator, pert: Perturbation, p: NormKind
) -> Perturbation:
    """Random direction scaled to exactly the same per-modality lp norms.

    Control condition for universal-perturbation comparisons.
    """

    def matched(reference: np.ndarray) -> np.ndarray:
        target = lp_norm(reference, p)
        if target == 0.0:
            return np.zeros_like(reference)
        direction = rng.standard_normal(reference.size)
        dnorm = lp_norm(direction, p)
        return direction * (target / dnorm)

    return Perturbation(matched(pert.delta_audio), matched(pert.delta_video))


def budget_with(budget: PerturbationBudget, **kwargs) -> PerturbationBudget:
    return replace(budget, **kwargs)
