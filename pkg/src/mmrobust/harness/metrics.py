"""Evaluation metrics: accuracy, mean average precision, ROC AUC by rank
statistic, d-prime, and performance drop rates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from ..errors import DomainError, EmptyInputError, ShapeError

if TYPE_CHECKING:  # only for annotations; avoids an import cycle
    from ..attacks import PerturbationBudget
    from ..geometry import ClassGeometry

logger = logging.getLogger(__name__)


@dataclass
class MetricBundle:
    accuracy: float
    mAP: float
    AUC: float
    d_prime: float

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mAP": self.mAP,
            "AUC": self.AUC,
            "d_prime": self.d_prime,
        }


@dataclass
class AttackReport:
    """Clean vs attacked evaluation plus per-class performance drops.

    per_class_drop maps class id to (clean - attacked) / clean of the
    per-class performance (accuracy for single-label runs, average
    precision for multi-label runs); NaN where clean performance is zero.
    """

    clean: MetricBundle
    attacked: MetricBundle
    per_class_drop: dict[int, float]
    budget: "PerturbationBudget"
    per_class_clean: dict[int, float] = field(default_factory=dict)
    per_class_attacked: dict[int, float] = field(default_factory=dict)
    per_class_geometry: list["ClassGeometry"] | None = None


# ---------------------------------------------------------------------------
# inverse standard normal CDF
#
# Acklam's rational approximation (~1.15e-9 relative error) followed by one
# Halley refinement step, which takes the result to near machine precision.

_PPF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_PPF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_PPF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_PPF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)


def norm_ppf(p: float) -> float:
    """Quantile of the standard normal distribution for p in (0, 1)."""
    p = float(p)
    if not (0.0 < p < 1.0):
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise DomainError(f"norm_ppf requires p in [0, 1], got {p}")
    a, b, c, d = _PPF_A, _PPF_B, _PPF_C, _PPF_D
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    # Halley step against the exact CDF (erfc form is stable in the tails)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def d_prime_from_auc(auc: float) -> float:
    """Detection-theory separability index: sqrt(2) * Phi^-1(AUC)."""
    if not (0.0 <= auc <= 1.0):
        raise DomainError(f"AUC must lie in [0, 1], got {auc}")
    return math.sqrt(2.0) * norm_ppf(auc)


# ---------------------------------------------------------------------------
# ranking metrics


def binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """ROC AUC of one score column via the Mann-Whitney rank statistic.

    Ties get average ranks, so tied positive/negative pairs count 1/2.
    Requires at least one positive and one negative.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs both positives and negatives")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.arange(1, scores.size + 1, dtype=np.float64)
    # average ranks over tie groups
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.size:
        j = i
        while j + 1 < sorted_scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def binary_average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Non-interpolated AP: mean precision at each positive's rank.

    Descending score order; ties broken by original index (stable sort)
    so results are deterministic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise DomainError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    hits = pos[order].astype(np.float64)
    cum_hits = np.cumsum(hits)
    precision_at = cum_hits / np.arange(1, scores.size + 1, dtype=np.float64)
    return float(np.sum(precision_at * hits) / n_pos)


def eval_metrics(scores: np.ndarray, labels: np.ndarray, multi_label: bool) -> MetricBundle:
    """Aggregate accuracy / mAP / macro AUC / d-prime for a score matrix.

    scores and labels are (n, K). Accuracy is argmax agreement in
    single-label mode and element-wise agreement at threshold 0.5 in
    multi-label mode (scores interpreted as probabilities there). Classes
    without positives are skipped for AP; classes without both positives
    and negatives are skipped for AUC, with a logged warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise EmptyInputError("eval_metrics needs a non-empty (n, K) matrix")
    n, k = scores.shape
    positives = labels >= 0.5

    if multi_label:
        accuracy = float(np.mean((scores >= 0.5) == positives))
    else:
        accuracy = float(np.mean(np.argmax(scores, axis=1) == np.argmax(labels, axis=1)))

    aps, aucs = [], []
    for c in range(k):
        pos_c = positives[:, c]
        n_pos = int(pos_c.sum())
        if n_pos == 0:
            logger.warning("class %d has no positives; skipped for mAP/AUC", c)
            continue
        aps.append(binary_average_precision(scores[:, c], pos_c))
        if n_pos == n:
            logger.warning("class %d has no negatives; skipped for AUC", c)
            continue
        aucs.append(binary_auc(scores[:, c], pos_c))

    mean_ap = float(np.mean(aps)) if aps else float("nan")
    mean_auc = float(np.mean(aucs)) if aucs else float("nan")
    d_prime = d_prime_from_auc(mean_auc) if not math.isnan(mean_auc) else float("nan")
    return MetricBundle(accuracy=accuracy, mAP=mean_ap, AUC=mean_auc, d_prime=d_prime)


def drop_rate(clean: float, attacked: float) -> float:
    """(clean - attacked) / clean; requires clean > 0."""
    if clean <= 0:
        raise DomainError(f"drop_rate needs clean performance > 0, got {clean}")
    return (clean - attacked) / clean


def per_class_performance(
    scores: np.ndarray, labels: np.ndarray, multi_label: bool
) -> dict[int, float]:
    """Per-class score used in the drop-rate columns.

    Single-label: accuracy over the samples whose true class is c.
    Multi-label: average precision of class c's score column. Classes
    with no samples / no positives map to NaN.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    k = scores.shape[1]
    out: dict[int, float] = {}
    if multi_label:
        for c in range(k):
            pos = labels[:, c] >= 0.5
            out[c] = binary_average_precision(scores[:, c], pos) if pos.any() else float("nan")
        return out
    true_class = np.argmax(labels, axis=1)
    pred_class = np.argmax(scores, axis=1)
    for c in range(k):
        members = true_class == c
        out[c] = float(np.mean(pred_class[members] == c)) if members.any() else float("nan")
    return out
