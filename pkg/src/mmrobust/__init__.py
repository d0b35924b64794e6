"""Desk-scale workbench for adversarial robustness of two-tower
audio/video fusion classifiers: training, lp-constrained PGD attacks
with modality masks, class-wise density and convexity metrics, gated
mixup and fast adversarial training, and a constructive check that
unimodal attacks can break fused models."""

from .errors import (
    BudgetError,
    ConfigError,
    ConstructionError,
    DegenerateShellError,
    DomainError,
    EmptyInputError,
    FormatError,
    GateError,
    MMRobustError,
    SameClassError,
    ShapeError,
)
from .numerics import NormKind, lp_norm, lp_project, log_gamma, quantile

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "ConfigError",
    "ConstructionError",
    "DegenerateShellError",
    "DomainError",
    "EmptyInputError",
    "FormatError",
    "GateError",
    "MMRobustError",
    "NormKind",
    "SameClassError",
    "ShapeError",
    "log_gamma",
    "lp_norm",
    "lp_project",
    "quantile",
    "__version__",
]
