"""Exception hierarchy shared by every module."""


class CantorError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(CantorError, ValueError):
    """Bad arguments: mismatched generations, missing parameters, bad flags."""


class DomainError(CantorError, ValueError):
    """A function was evaluated outside its domain."""


class SingularityError(DomainError):
    """Ring kernel evaluated at (or numerically at) its (0, 1) singularity."""


class DegenerateGeometryError(CantorError):
    """Two points of a level coincide."""

    def __init__(self, message, cells=None):
        super().__init__(message)
        self.cells = cells


class InfeasibleError(CantorError):
    """A spacing parameter left [1, a], or an oscillation exceeded its budget."""

    def __init__(self, message, word=None, oscillation=None, budget=None, generation=None):
        super().__init__(message)
        self.word = word
        self.oscillation = oscillation
        self.budget = budget
        self.generation = generation


class BudgetError(CantorError):
    """Hierarchical summation cannot certify the requested error budget."""

    def __init__(self, message, attainable=None):
        super().__init__(message)
        self.attainable = attainable


class NumericError(CantorError, ArithmeticError):
    """Quadrature or root finding failed to converge."""


class ResourceLimitError(CantorError):
    """A run would exceed the configured point-count cap."""
