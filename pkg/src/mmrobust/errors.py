"""Exception hierarchy shared across the package.

Every error raised by the library derives from MMRobustError so callers
(and the CLI) can catch one type and report the categorized name.
"""


class MMRobustError(Exception):
    """Base class for all library errors."""


class DomainError(MMRobustError):
    """Argument outside the mathematical domain of an operation."""


class BudgetError(MMRobustError):
    """Invalid perturbation budget (negative epsilon, bad search range)."""


class EmptyInputError(MMRobustError):
    """An operation that needs at least one element got none."""


class ShapeError(MMRobustError):
    """Dimension mismatch between model and data."""


class DegenerateShellError(MMRobustError):
    """Density shell has zero log-volume width (R_full == R_tau or R_tau == 0)."""


class SameClassError(MMRobustError):
    """Mixup pair drawn from a single class."""


class GateError(MMRobustError):
    """Mixup pair uses a class that did not pass the density/convexity gates."""


class ConstructionError(MMRobustError):
    """Counterexample construction cannot bracket its target crossing."""


class FormatError(MMRobustError):
    """Malformed dataset/checkpoint file."""


class ConfigError(MMRobustError):
    """Experiment config violates the schema; message names the field."""
