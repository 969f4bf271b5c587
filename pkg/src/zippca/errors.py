class ZippcaError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ZippcaError, ValueError):
    """Input has the wrong shape, type or range."""


class DomainError(ValidationError):
    """Input lies outside the mathematical domain of an operation."""


class DegenerateSupportError(ZippcaError, ValueError):
    """A sample has no taxon left with positive probability mass."""


class SingularityError(ZippcaError, ArithmeticError):
    """sigma^2 * lambda^2 reached 1, so I - Sigma_i Lambda_j is singular."""


class NonFiniteError(ZippcaError, FloatingPointError):
    """An objective, gradient or ELBO evaluated to inf or nan.

    `snapshot` holds copies of the state at the point of failure, if known.
    """

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}
