"""Shared math substrate: lp norms and projections, quantiles, log-Gamma.

All public operations are pure functions of immutable inputs and are safe
to call concurrently. Scalars are 64-bit floats throughout, even where
file storage is 32-bit, because the volume formulas take log-Gamma of
large arguments.
"""
from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from .errors import BudgetError, DomainError, EmptyInputError


class NormKind(enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @classmethod
    def parse(cls, text: str) -> "NormKind":
        key = str(text).strip().lower()
        aliases = {
            "l1": cls.L1, "1": cls.L1,
            "l2": cls.L2, "2": cls.L2,
            "linf": cls.LINF, "inf": cls.LINF, "infinity": cls.LINF,
        }
        if key not in aliases:
            raise DomainError(f"unknown norm {text!r}; expected one of l1, l2, linf")
        return aliases[key]


def as_vector(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Validate and return a finite 1-D float64 array.

    This is the construction point for the package's vector type: every
    user-facing entry point funnels raw sequences through here so NaN/Inf
    never enter the math.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DomainError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector contains NaN or Inf")
    return v


def lp_norm(v: np.ndarray, p: NormKind) -> float:
    """lp norm of a vector. Returns 0 exactly for the zero vector."""
    v = np.asarray(v, dtype=np.float64)
    if p is NormKind.L1:
        return float(np.sum(np.abs(v)))
    if p is NormKind.L2:
        return float(np.sqrt(np.sum(v * v)))
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(v)))


def _project_l1(v: np.ndarray, eps: float) -> np.ndarray:
    # Euclidean projection onto the l1 ball via the sorted simplex
    # projection (Duchi et al. 2008), O(n log n).
    mags = np.abs(v)
    u = np.sort(mags)[::-1]
    cssv = np.cumsum(u) - eps
    arange = np.arange(1, v.size + 1)
    mask = u * arange > cssv
    rho = int(np.nonzero(mask)[0][-1])
    theta = cssv[rho] / float(rho + 1)
    return np.sign(v) * np.maximum(mags - theta, 0.0)


def lp_project(v: np.ndarray, p: NormKind, eps: float) -> np.ndarray:
    """Euclidean projection of v onto the lp ball of radius eps.

    Vectors already inside the ball are returned unchanged (same values,
    fresh array). For L1 the sorted simplex-projection algorithm is used;
    L2 is radial scaling and LInf a per-coordinate clamp.
    """
    if eps < 0:
        raise BudgetError(f"projection radius must be >= 0, got {eps}")
    v = np.asarray(v, dtype=np.float64)
    if lp_norm(v, p) <= eps:
        return v.copy()
    if eps == 0.0:
        return np.zeros_like(v)
    if p is NormKind.L2:
        return v * (eps / lp_norm(v, NormKind.L2))
    if p is NormKind.LINF:
        return np.clip(v, -eps, eps)
    return _project_l1(v, eps)


# Lanczos approximation, g = 7, n = 9 (standard coefficient set; about
# 15 significant digits over the positive reals).
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def log_gamma(x: float) -> float:
    """Natural log of Gamma(x) for x > 0 via the Lanczos series."""
    x = float(x)
    if not (x > 0) or not math.isfinite(x):
        raise DomainError(f"log_gamma requires x > 0, got {x}")
    if x < 0.5:
        # reflection keeps the series in its accurate range
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc += c / (x + i)
    t = x + _LANCZOS_G + 0.5
    return 0.5 * math.log(2.0 * math.pi) + (x + 0.5) * math.log(t) - t + math.log(acc)


def ceil_rank(tau: float, n: int) -> int:
    """ceil(tau * n) clamped to [1, n], with a 1e-9 rounding guard.

    The guard keeps products like 0.7 * 10 from landing on 7.0000000000001
    and bumping the rank. Shared by quantile() and the class-geometry
    sample counts so the two never disagree.
    """
    rank = math.ceil(round(tau * n, 9))
    return min(max(rank, 1), n)


def quantile(values: Sequence[float] | np.ndarray, tau: float) -> float:
    """Ceil-rank order statistic: the value at rank ceil(tau*n) ascending.

    tau=0 gives the minimum, tau=1 the maximum. No interpolation, so the
    result is always an element of the input.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyInputError("quantile of an empty sequence")
    if not (0.0 <= tau <= 1.0):
        raise DomainError(f"tau must lie in [0, 1], got {tau}")
    ordered = np.sort(v)
    return float(ordered[ceil_rank(tau, v.size) - 1])
