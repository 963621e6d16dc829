"""Exception hierarchy shared by all modules."""


class QsdynError(Exception):
    """Base class for all package errors."""


class DomainError(QsdynError):
    """An argument lies outside the region where the operation is defined."""


class NoSolutionError(QsdynError):
    """Root finding was asked for a value outside the function's range."""


class ContractViolationError(QsdynError):
    """A numeric contract (monotonicity, pinning, ...) failed at runtime."""


class StructureError(QsdynError):
    """A dynamical object does not have the expected structure."""


class NotConjugateError(QsdynError):
    """Two maps disagree on kneading data; no conjugacy exists."""

    def __init__(self, message, depth=None):
        super().__init__(message)
        self.depth = depth


class CorrespondenceError(QsdynError):
    """Branch structures of two induced maps fail to match."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MarkingError(QsdynError):
    """An inner equivalence is not marked at the required critical value."""


class PrecisionError(QsdynError):
    """An orbit entered the tolerance band around 0; result is ambiguous."""


class BudgetError(QsdynError):
    """An iteration budget was exhausted before the construction finished."""


class OutOfClassError(QsdynError):
    """The map leaves the class the requested construction assumes."""


class RenormalizationError(QsdynError):
    """A renormalized map failed validation."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
