"""Exception hierarchy shared across the package."""


class DecboError(Exception):
    """Base class for all package errors."""


class DimMismatch(DecboError):
    """Operands have incompatible shapes."""


class NotSPD(DecboError):
    """Matrix is not symmetric positive definite."""


class NotSymmetric(DecboError):
    """Matrix fails the symmetry tolerance."""


class NotDoublyStochastic(DecboError):
    """Rows or columns do not sum to one, or entries are negative."""


class NotContractive(DecboError):
    """Second-largest eigenvalue magnitude is not strictly below one."""


class BadParameter(DecboError):
    """Argument outside its admissible range."""


class BreakdownDetected(DecboError):
    """Conjugate-gradient curvature became non-positive (operator not SPD)."""


class NoConvergence(DecboError):
    """Iterative solve exceeded its iteration cap."""


class Divergence(DecboError):
    """Iterate norm exceeded the divergence guard."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class MissingInput(DecboError):
    """A regime-required input was not supplied."""


class ParseError(DecboError):
    """Config file or flag could not be parsed."""


class ValidationError(DecboError):
    """Parsed configuration violates an invariant."""
