"""Exception hierarchy shared across the package."""


class FiptiwError(Exception):
    """Base class for all errors raised by this package."""


class DataError(FiptiwError):
    """Malformed panel data or CSV input."""


class ConfigError(FiptiwError):
    """Invalid configuration (CLI specs, scenario grids)."""


class ConvergenceError(FiptiwError):
    """An iterative fit failed to converge."""


class SeparationError(ConvergenceError):
    """Perfect separation detected in a logistic fit."""


class PositivityError(FiptiwError):
    """A probability needed in a denominator is numerically 0 or 1."""


class RankError(FiptiwError):
    """Singular information matrix or rank-deficient design."""


class BoundViolationError(FiptiwError):
    """The dominating bound of a thinning sampler was exceeded."""
