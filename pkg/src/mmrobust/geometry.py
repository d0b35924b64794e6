"""Class-wise robustness metrics over bottleneck embeddings.

Two metrics per class: a centroid-based density, the number of samples in
the outer crust of the class ball divided by the log-volume width of that
crust, and a sampling-based convexity, the fraction of random segment
points between class embeddings that the fusion head still assigns to the
class.

The lp-ball volume used by the density is

    log V_d^p(R) = d * log(2 * Gamma(1/p + 1)) + d * log R - log Gamma(d/p + 1)

with 1/p = 0 for the LInf ball. Note the exponent d on the numerator: the
commonly printed form of this formula sometimes carries a literal 2 there,
which fails even the unit-disk check (d=2, p=2, R=1 must give log pi), so
the dimensionally correct exponent is used here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateShellError, DomainError, EmptyInputError
from .numerics import NormKind, ceil_rank, log_gamma, quantile

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class ClassGeometry:
    class_id: int
    n_samples: int
    centroid: np.ndarray
    r_full: float
    r_tau: float
    tau: float
    n_tau: int
    norm: NormKind
    rho: float
    kappa: float
    n_convexity: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.r_tau <= self.r_full):
            raise DomainError(f"need 0 <= R_tau <= R_full, got {self.r_tau}, {self.r_full}")
        if self.n_tau > self.n_samples:
            raise DomainError("n_tau cannot exceed the class size")
        if not math.isnan(self.kappa) and not (0.0 <= self.kappa <= 1.0):
            raise DomainError(f"kappa must lie in [0, 1], got {self.kappa}")


def class_centroid(embeddings: np.ndarray) -> np.ndarray:
    """Coordinate-wise mean of the class's embedding rows."""
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if emb.shape[0] == 0:
        raise EmptyInputError("centroid of an empty class")
    return emb.mean(axis=0)


def centroid_distances(embeddings: np.ndarray, centroid: np.ndarray, p: NormKind) -> np.ndarray:
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    diff = emb - np.asarray(centroid, dtype=np.float64)
    if p is NormKind.L1:
        return np.abs(diff).sum(axis=1)
    if p is NormKind.L2:
        return np.sqrt((diff * diff).sum(axis=1))
    return np.abs(diff).max(axis=1) if diff.shape[1] else np.zeros(diff.shape[0])


def class_radii(
    embeddings: np.ndarray, centroid: np.ndarray, p: NormKind, tau: float
) -> tuple[float, float, int]:
    """(R_full, R_tau, n_tau) for one class.

    R_full is the max distance to the centroid, R_tau the ceil-rank tau
    quantile of the distances, n_tau = ceil(tau * n).
    """
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    dists = centroid_distances(embeddings, centroid, p)
    if dists.size == 0:
        raise EmptyInputError("radii of an empty class")
    r_full = float(dists.max())
    r_tau = quantile(dists, tau)
    return r_full, r_tau, ceil_rank(tau, dists.size)


def ball_log_volume(d: int, p: NormKind, radius: float) -> float:
    """log volume of the d-dimensional lp ball of the given radius."""
    if radius <= 0:
        raise DomainError(f"radius must be > 0, got {radius}")
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    inv_p = {NormKind.L1: 1.0, NormKind.L2: 0.5, NormKind.LINF: 0.0}[p]
    return (
        d * math.log(2.0 * math.exp(log_gamma(inv_p + 1.0)))
        + d * math.log(radius)
        - log_gamma(d * inv_p + 1.0)
    )


def density_metric(
    n_samples: int, n_tau: int, d: int, p: NormKind, r_full: float, r_tau: float
) -> float:
    """Outer-crust density: samples beyond the tau radius per unit of
    log-volume between the tau ball and the full ball.

    Scale-invariant, since the log-volume difference reduces to
    d * (log R_full - log R_tau).
    """
    if r_tau <= 0.0:
        raise DegenerateShellError("R_tau is zero; the crust has no inner ball")
    if r_full == r_tau:
        raise DegenerateShellError("R_full == R_tau; all mass sits at one radius")
    width = ball_log_volume(d, p, r_full) - ball_log_volume(d, p, r_tau)
    return (n_samples - n_tau) / width


def convexity_metric(
    score_fn: ScoreFn,
    embeddings: np.ndarray,
    class_id: int,
    *,
    n: int = 2000,
    seed=0,
    multi_label: bool = False,
) -> float:
    """Fraction of sampled segment points the classifier keeps in the class.

    Draw order (fixed so an independent reimplementation with the same
    seed matches exactly): endpoint index pairs as one integers(0, n_c,
    size=(n, 2)) call, then the n mixing weights as one random(n) call.
    Each point is theta * x1 + (1 - theta) * x2. Membership is argmax ==
    class_id in single-label mode, score >= 0 on the class output
    (sigmoid >= 0.5) in multi-label mode.
    """
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if emb.shape[0] == 0:
        raise EmptyInputError("convexity of an empty class")
    if n < 1:
        raise DomainError(f"sample budget must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, emb.shape[0], size=(n, 2))
    theta = rng.random(n)
    points = theta[:, None] * emb[idx[:, 0]] + (1.0 - theta)[:, None] * emb[idx[:, 1]]
    scores = np.asarray(score_fn(points), dtype=np.float64)
    if multi_label:
        member = scores[:, class_id] >= 0.0
    else:
        member = np.argmax(scores, axis=1) == class_id
    return float(np.mean(member))


def class_membership(labels: np.ndarray, multi_label: bool) -> list[np.ndarray]:
    """Per-class boolean membership rows from a label matrix.

    Single-label: argmax of the label vector. Multi-label: label >= 0.5,
    so one sample can belong to several classes.
    """
    y = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    k = y.shape[1]
    if multi_label:
        return [y[:, c] >= 0.5 for c in range(k)]
    owner = np.argmax(y, axis=1)
    return [owner == c for c in range(k)]


def compute_class_geometry(
    embeddings: np.ndarray,
    labels: np.ndarray,
    score_fn: ScoreFn,
    *,
    norm: NormKind = NormKind.L2,
    tau: float = 0.8,
    n_convexity: int = 2000,
    seed: int = 0,
    multi_label: bool = False,
    class_ids: Sequence[int] | None = None,
) -> list[ClassGeometry]:
    """Density and convexity for every class of an embedding matrix.

    Empty classes are skipped. Degenerate shells (single point, or all
    points at one radius) give rho = NaN rather than an error, so a full
    report can still be emitted. The convexity sampler uses an
    independent per-class stream derived from (seed, class_id).
    """
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    members = class_membership(labels, multi_label)
    wanted = range(len(members)) if class_ids is None else class_ids
    out: list[ClassGeometry] = []
    for c in wanted:
        rows = emb[members[c]]
        n_c = rows.shape[0]
        if n_c == 0:
            continue
        centroid = class_centroid(rows)
        r_full, r_tau, n_tau = class_radii(rows, centroid, norm, tau)
        try:
            rho = density_metric(n_c, n_tau, emb.shape[1], norm, r_full, r_tau)
        except DegenerateShellError:
            rho = float("nan")
        kappa = convexity_metric(
            score_fn, rows, c, n=n_convexity, seed=[seed, c], multi_label=multi_label
        )
        out.append(
            ClassGeometry(
                class_id=c,
                n_samples=n_c,
                centroid=centroid,
                r_full=r_full,
                r_tau=r_tau,
                tau=tau,
                n_tau=n_tau,
                norm=norm,
                rho=rho,
                kappa=kappa,
                n_convexity=n_convexity,
            )
        )
    return out


def inner_quantile_indices(
    embeddings: np.ndarray, member_rows: np.ndarray, geometry: ClassGeometry
) -> np.ndarray:
    """Dataset indices of the class samples inside the tau radius.

    Ties at exactly R_tau count inside, matching the ceil-rank quantile.
    """
    idx = np.nonzero(member_rows)[0]
    rows = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))[idx]
    dists = centroid_distances(rows, geometry.centroid, geometry.norm)
    return idx[dists <= geometry.r_tau]
