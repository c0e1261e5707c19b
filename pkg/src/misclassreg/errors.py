"""Exception hierarchy.

Each top-level class maps to one CLI exit code, so callers can catch the
broad category while tests match the specific failure.
"""


class MisclassRegError(Exception):
    exit_code = 1


class ValidationError(MisclassRegError, ValueError):
    """Input data or configuration violates a model precondition."""

    exit_code = 2


class StructuralViolationError(ValidationError):
    """A queried row has X=1 with X*=0 under one-sided misclassification."""


class SingularDesignError(ValidationError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class SeparationError(ValidationError):
    def __init__(self, message, kind="complete"):
        super().__init__(message)
        self.kind = kind


class LinearPredictorOverflowError(ValidationError, OverflowError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConvergenceError(MisclassRegError):
    exit_code = 3

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DifferentiationError(ConvergenceError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class IntegrityError(MisclassRegError):
    """External data contradict a physical constraint (route < straight line)."""

    exit_code = 4

    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)
