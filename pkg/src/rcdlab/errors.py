"""Exception hierarchy shared by all rcdlab modules."""


class RcdLabError(Exception):
    """Base class for every error raised by rcdlab."""


class ParameterError(RcdLabError, ValueError):
    """An argument is outside the documented domain of an operation."""


class ConstructionError(RcdLabError):
    """A model or operator could not be assembled with its invariants intact."""


class NumericError(RcdLabError):
    """A numerical kernel (eigensolver, quadrature) failed."""


class SolverError(RcdLabError):
    """An iterative or convex solver did not converge.

    ``best_value`` carries the best feasible value found before giving up.
    """

    def __init__(self, message, best_value=None):
        super().__init__(message)
        self.best_value = best_value


class DegenerateInputError(RcdLabError, ValueError):
    """Input that makes a quantity undefined (log of zero, isolated point)."""


class UnsupportedSpaceError(RcdLabError):
    """The operation is not defined on this kind of model space."""
