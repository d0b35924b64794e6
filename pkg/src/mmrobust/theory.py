"""Constructive demonstration that a unimodal perturbation within the
unimodal robustness threshold can flip a two-modality fusion classifier.

The construction is a binary linear fusion model whose attacked-modality
score starts at -s (correct side, the true label is the negative class)
while the other modality contributes +t. When s < t the fused score is
already positive and no noise is needed. When s >= t, the attacked
modality's score is continuous along its ascent direction and crosses
from -s to 0 at the unimodal threshold, so an intermediate point with
score exactly -t/2 exists strictly inside the threshold; there the fused
score is +t/2 and the prediction flips. Sign convention: fused score < 0
means the (correct) negative class.

An empirical search mode runs the same story against trained nonlinear
models: samples where a single-modality PGD attack flips the prediction
at a radius below the sample's joint-attack robustness threshold.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import models
from .attacks import Mask, PerturbationBudget, pgd_attack, pointwise_robustness
from .errors import ConstructionError, DomainError
from .models import Affine, Dataset, FusionModel, MultiModalSample, identity_encoder
from .numerics import NormKind, as_vector, lp_norm


class BreakCase(enum.Enum):
    NO_NOISE_NEEDED = "no_noise_needed"
    IVT_BREAK = "ivt_break"


@dataclass
class CounterexampleSpec:
    """Coefficients of the binary construction.

    a and b are the head coefficients for the audio and video encodings;
    s is the magnitude of the attacked modality's (negative, correct)
    score and t the other modality's positive score. eps_unimodal is the
    unimodal zero-crossing radius; None means the computed value
    s / ||coef||_2 of the attacked modality.
    """

    a: np.ndarray
    b: np.ndarray
    s: float
    t: float
    eps_unimodal: float | None = None
    tol: float = 1e-6

    def __post_init__(self) -> None:
        self.a = as_vector(self.a)
        self.b = as_vector(self.b)
        if not (self.s > 0 and self.t > 0):
            raise DomainError("s and t must both be > 0")
        if not self.tol > 0:
            raise DomainError("tol must be > 0")
        if lp_norm(self.a, NormKind.L2) == 0 or lp_norm(self.b, NormKind.L2) == 0:
            raise DomainError("head coefficients must be nonzero")


@dataclass
class TheoremReport:
    case: BreakCase
    modality: str
    delta: np.ndarray
    delta_norm: float
    fused_score_before: float
    fused_score_after: float
    label_flipped: bool
    eps_unimodal: float
    bisection_iterations: int = 0

    def as_dict(self) -> dict:
        return {
            "case": self.case.value,
            "modality": self.modality,
            "delta": [float(v) for v in self.delta],
            "delta_norm": self.delta_norm,
            "fused_score_before": self.fused_score_before,
            "fused_score_after": self.fused_score_after,
            "label_flipped": self.label_flipped,
            "eps_unimodal": self.eps_unimodal,
            "bisection_iterations": self.bisection_iterations,
        }


def construct_counterexample(
    spec: CounterexampleSpec, modality: str = "audio"
) -> tuple[FusionModel, MultiModalSample]:
    """Binary fusion model and sample realizing scores (-s, +t).

    Encoders are identity affine maps (continuous, trivially monotone
    along any ray) and the head turns the fused score w.(ga ++ hv) into
    two logits (-score/2, +score/2), so class 1 wins exactly when the
    score is positive. The correct class is 0. The attacked modality
    carries the -s score.
    """
    if modality not in ("audio", "video"):
        raise DomainError(f"modality must be audio or video, got {modality!r}")
    a, b = spec.a, spec.b
    if modality == "audio":
        x_audio = -spec.s * a / float(a @ a)
        x_video = spec.t * b / float(b @ b)
    else:
        x_audio = spec.t * a / float(a @ a)
        x_video = -spec.s * b / float(b @ b)
    w = np.concatenate([a, b])
    head = [Affine(np.vstack([-0.5 * w, 0.5 * w]), np.zeros(2), "linear")]
    model = FusionModel(
        encoder_audio=identity_encoder(a.size),
        encoder_video=identity_encoder(b.size),
        head=head,
        activation="relu",
        loss_kind="softmax_ce",
    )
    sample = MultiModalSample(x_audio, x_video, np.array([1.0, 0.0]))
    return model, sample


def fused_score(model: FusionModel, x_audio: np.ndarray, x_video: np.ndarray) -> float:
    logits, _ = models.forward(model, x_audio, x_video)
    return float(logits[1] - logits[0])


def _unimodal_score(model: FusionModel, spec: CounterexampleSpec, modality: str, x: np.ndarray) -> float:
    if modality == "audio":
        return float(spec.a @ models.encode_audio(model, x))
    return float(spec.b @ models.encode_video(model, x))


def default_eps_unimodal(spec: CounterexampleSpec, modality: str = "audio") -> float:
    coef = spec.a if modality == "audio" else spec.b
    return spec.s / lp_norm(coef, NormKind.L2)


def find_unimodal_break(
    model: FusionModel,
    sample: MultiModalSample,
    spec: CounterexampleSpec,
    modality: str = "audio",
) -> TheoremReport:
    """Locate the perturbation promised by the intermediate-value argument.

    s < t needs no noise at all. Otherwise bisection along the attacked
    modality's ascent direction finds the point where that modality's
    score equals -t/2, which leaves the fused score at +t/2 while staying
    strictly inside the unimodal threshold.
    """
    coef = spec.a if modality == "audio" else spec.b
    x_att = sample.x_audio if modality == "audio" else sample.x_video
    direction = coef / lp_norm(coef, NormKind.L2)
    eps_uni = spec.eps_unimodal
    if eps_uni is None:
        eps_uni = default_eps_unimodal(spec, modality)
    before = fused_score(model, sample.x_audio, sample.x_video)

    if spec.s < spec.t:
        return TheoremReport(
            case=BreakCase.NO_NOISE_NEEDED,
            modality=modality,
            delta=np.zeros_like(x_att),
            delta_norm=0.0,
            fused_score_before=before,
            fused_score_after=before,
            label_flipped=before > 0.0,
            eps_unimodal=eps_uni,
        )

    target = -spec.t / 2.0

    def gap(u: float) -> float:
        return _unimodal_score(model, spec, modality, x_att + u * direction) - target

    lo, hi = 0.0, eps_uni
    if not (gap(lo) < 0.0 < gap(hi)):
        raise ConstructionError(
            f"cannot bracket the -t/2 crossing on [0, {eps_uni}]; "
            "spec does not satisfy the s >= t construction"
        )
    iterations = 0
    mid = 0.5 * (lo + hi)
    while abs(gap(mid)) >= spec.tol:
        if gap(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        mid = 0.5 * (lo + hi)
        iterations += 1
        if iterations > 10_000:
            raise ConstructionError("bisection failed to converge; encoder not monotone?")

    delta = mid * direction
    if modality == "audio":
        after = fused_score(model, sample.x_audio + delta, sample.x_video)
    else:
        after = fused_score(model, sample.x_audio, sample.x_video + delta)
    return TheoremReport(
        case=BreakCase.IVT_BREAK,
        modality=modality,
        delta=delta,
        delta_norm=float(mid),
        fused_score_before=before,
        fused_score_after=after,
        label_flipped=after > 0.0,
        eps_unimodal=eps_uni,
        bisection_iterations=iterations,
    )


def verify_theorem1(report: TheoremReport, spec: CounterexampleSpec) -> bool:
    """Check a break report against the theorem's promises."""
    if not report.label_flipped:
        return False
    if report.case is BreakCase.NO_NOISE_NEEDED:
        return report.delta_norm == 0.0 and report.fused_score_after > 0.0
    if not report.delta_norm < report.eps_unimodal:
        return False
    return abs(report.fused_score_after - spec.t / 2.0) < spec.tol


# ---------------------------------------------------------------------------
# empirical mode against trained nonlinear models


@dataclass
class EmpiricalBreak:
    sample_index: int
    eps_star_joint: float
    flip_epsilon: float


def empirical_unimodal_break(
    model: FusionModel,
    dataset: Dataset,
    *,
    mask: Mask = Mask.AUDIO_ONLY,
    norm: NormKind = NormKind.L2,
    eps_max: float = 1.0,
    tol: float = 1e-3,
    iterations: int = 20,
    fractions: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95),
    stop_after: int | None = None,
) -> list[EmpiricalBreak]:
    """Search for samples where a unimodal attack beats the joint threshold.

    For each correctly classified sample, measure the joint-mask
    point-wise robustness, then probe the single-modality attack at a
    grid of radii strictly below it. A hit means the unimodal attack
    flipped the prediction at a radius where even the joint attack had
    appeared safe.
    """
    if mask is Mask.BOTH:
        raise DomainError("empirical search needs a unimodal mask")
    hits: list[EmpiricalBreak] = []
    for i, sample in enumerate(dataset.samples):
        eps_star = pointwise_robustness(
            model, sample, norm, Mask.BOTH, eps_max, tol, iterations=iterations
        )
        if eps_star <= tol:
            continue
        logits, _ = models.forward(model, sample.x_audio, sample.x_video)
        clean_pred = models.predicted_labels(model, logits.reshape(1, -1))[0]
        for f in fractions:
            eps = f * eps_star
            if eps <= 0.0:
                continue
            budget = PerturbationBudget(
                epsilon=eps, norm=norm, iterations=iterations, mask=mask
            )
            pert = pgd_attack(model, sample, budget)
            att_logits, _ = models.forward(
                model,
                sample.x_audio + pert.delta_audio,
                sample.x_video + pert.delta_video,
            )
            att_pred = models.predicted_labels(model, att_logits.reshape(1, -1))[0]
            if not np.array_equal(att_pred, clean_pred):
                hits.append(EmpiricalBreak(i, eps_star, eps))
                break
        if stop_after is not None and len(hits) >= stop_after:
            break
    return hits
